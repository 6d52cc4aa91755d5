//! Multispecies coefficients `h_σ^π`.
//!
//! An [`HFunction`] is a function on species maps, supported on the orbit of
//! the initial map `ν` under slot permutations. The operators
//! `T_i⁰(σ, h) = h + (1 + S(ξ_{σ(i)}, ξ_{σ(i+1)})) [α_i · (h ∘ T_i) − β_i · h]`
//! build `h_σ` from `h_e = δ_ν` along any word for `σ`; the braid relations
//! make the result word-independent.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bethe::{amplitude, scattering, PairFactors, RateParams};
use crate::error::{AsepError, Result};
use crate::permutations::{factorial, Permutation, TranspositionWord};
use crate::scalar::Scalar;

/// Species labels `π_1, …, π_N`, each in `1..=M`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct SpeciesMap {
    labels: Vec<u32>,
}

impl SpeciesMap {
    /// Labels must lie in `1..=species`.
    pub fn new(labels: Vec<u32>, species: u32) -> Result<Self> {
        if labels.iter().any(|&l| l == 0 || l > species) {
            return Err(AsepError::InvalidSpecies { labels, species });
        }
        Ok(Self { labels })
    }

    /// Single-species map of length `n`.
    pub fn uniform(n: usize) -> Self {
        Self { labels: vec![1; n] }
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Largest label present.
    pub fn species_count(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    #[inline]
    pub fn at(&self, i: usize) -> u32 {
        self.labels[i - 1]
    }

    /// `T_i π`: labels in slots `i` and `i + 1` interchanged.
    pub fn swap(&self, i: usize) -> Result<Self> {
        if i == 0 || i >= self.len() {
            return Err(AsepError::IndexOutOfRange { index: i, max: self.len().saturating_sub(1) });
        }
        let mut labels = self.labels.clone();
        labels.swap(i - 1, i);
        Ok(Self { labels })
    }

    /// 1-based slot of the first occurrence of `label`.
    pub fn position_of(&self, label: u32) -> Option<usize> {
        self.labels.iter().position(|&l| l == label).map(|k| k + 1)
    }

    /// All distinct rearrangements of the labels, lexicographically ordered.
    pub fn orbit(&self) -> Vec<SpeciesMap> {
        let mut cur = self.labels.clone();
        cur.sort_unstable();
        let mut out = vec![SpeciesMap { labels: cur.clone() }];
        let n = cur.len();
        if n < 2 {
            return out;
        }
        while let Some(a) = (0..n - 1).rev().find(|&a| cur[a] < cur[a + 1]) {
            let b = (a + 1..n).rev().find(|&b| cur[b] > cur[a]).unwrap();
            cur.swap(a, b);
            cur[a + 1..].reverse();
            out.push(SpeciesMap { labels: cur.clone() });
        }
        out
    }

    pub fn same_multiset(&self, other: &SpeciesMap) -> bool {
        let mut a = self.labels.clone();
        let mut b = other.labels.clone();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }
}

impl TryFrom<Vec<u32>> for SpeciesMap {
    type Error = AsepError;

    fn try_from(labels: Vec<u32>) -> Result<Self> {
        let m = labels.iter().copied().max().unwrap_or(1);
        Self::new(labels, m)
    }
}

impl From<SpeciesMap> for Vec<u32> {
    fn from(s: SpeciesMap) -> Self {
        s.labels
    }
}

impl fmt::Debug for SpeciesMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, l) in self.labels.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, ")")
    }
}

/// Which rate `α_i(π)` (or `β_i(π)`) takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Zero,
    P,
    Q,
}

impl RateKind {
    /// Kind of `α_i(π)`: 0 if `π_i = π_{i+1}`, `p` if `π_i < π_{i+1}`, `q` otherwise.
    pub fn alpha(left: u32, right: u32) -> Self {
        match left.cmp(&right) {
            std::cmp::Ordering::Equal => RateKind::Zero,
            std::cmp::Ordering::Less => RateKind::P,
            std::cmp::Ordering::Greater => RateKind::Q,
        }
    }

    /// `p` and `q` interchanged.
    pub fn flip(self) -> Self {
        match self {
            RateKind::Zero => RateKind::Zero,
            RateKind::P => RateKind::Q,
            RateKind::Q => RateKind::P,
        }
    }

    pub fn value<T: Scalar>(self, rates: &RateParams<T>) -> T {
        match self {
            RateKind::Zero => T::zero(),
            RateKind::P => rates.p().clone(),
            RateKind::Q => rates.q().clone(),
        }
    }
}

/// `(α_i(π), β_i(π))`.
pub fn alpha_beta<T: Scalar>(i: usize, pi: &SpeciesMap, rates: &RateParams<T>) -> Result<(T, T)> {
    if i == 0 || i >= pi.len() {
        return Err(AsepError::IndexOutOfRange { index: i, max: pi.len().saturating_sub(1) });
    }
    let kind = RateKind::alpha(pi.at(i), pi.at(i + 1));
    Ok((kind.value(rates), kind.flip().value(rates)))
}

/// The orbit of a species map with its `T_i` action tabulated.
#[derive(Debug)]
pub struct Orbit {
    maps: Vec<SpeciesMap>,
    index: HashMap<SpeciesMap, usize>,
    /// `swaps[i - 1][k]` is the index of `T_i π_k`.
    swaps: Vec<Vec<usize>>,
    /// `alpha[i - 1][k]` is the kind of `α_i(π_k)`.
    alpha: Vec<Vec<RateKind>>,
}

impl Orbit {
    pub fn new(nu: &SpeciesMap) -> Self {
        let maps = nu.orbit();
        let index: HashMap<_, _> = maps.iter().cloned().enumerate().map(|(k, m)| (m, k)).collect();
        let n = nu.len();
        let mut swaps = Vec::with_capacity(n.saturating_sub(1));
        let mut alpha = Vec::with_capacity(n.saturating_sub(1));
        for i in 1..n {
            swaps.push(maps.iter().map(|m| index[&m.swap(i).unwrap()]).collect());
            alpha.push(maps.iter().map(|m| RateKind::alpha(m.at(i), m.at(i + 1))).collect());
        }
        Self { maps, index, swaps, alpha }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn slots(&self) -> usize {
        self.maps[0].len()
    }

    pub fn maps(&self) -> &[SpeciesMap] {
        &self.maps
    }

    pub fn index_of(&self, pi: &SpeciesMap) -> Option<usize> {
        self.index.get(pi).copied()
    }

    /// One `T_i⁰` step on a dense value vector, with `c = 1 + S(…)`.
    pub(crate) fn t0_step<T: Scalar>(&self, i: usize, c: &T, h: &[T], rates: &RateParams<T>) -> Vec<T> {
        let swaps = &self.swaps[i - 1];
        let kinds = &self.alpha[i - 1];
        h.iter()
            .enumerate()
            .map(|(k, hk)| match kinds[k] {
                RateKind::Zero => hk.clone(),
                kind => {
                    let alpha = kind.value(rates);
                    let beta = kind.flip().value(rates);
                    hk.clone() + c.clone() * (alpha * h[swaps[k]].clone() - beta * hk.clone())
                }
            })
            .collect()
    }
}

/// A function on the orbit of `ν`, stored densely in orbit order.
#[derive(Clone)]
pub struct HFunction<T> {
    orbit: Arc<Orbit>,
    values: Vec<T>,
}

impl<T: Scalar> HFunction<T> {
    /// Indicator `δ_ν`.
    pub fn delta(orbit: Arc<Orbit>, at: &SpeciesMap) -> Result<Self> {
        let k = orbit.index_of(at).ok_or(AsepError::OrbitMismatch)?;
        let mut values = vec![T::zero(); orbit.len()];
        values[k] = T::one();
        Ok(Self { orbit, values })
    }

    pub fn from_values(orbit: Arc<Orbit>, values: Vec<T>) -> Result<Self> {
        if values.len() != orbit.len() {
            return Err(AsepError::SizeMismatch { expected: orbit.len(), got: values.len() });
        }
        Ok(Self { orbit, values })
    }

    pub fn orbit(&self) -> &Arc<Orbit> {
        &self.orbit
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Value at `π`; zero outside the orbit.
    pub fn get(&self, pi: &SpeciesMap) -> T {
        self.orbit.index_of(pi).map_or_else(T::zero, |k| self.values[k].clone())
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (&SpeciesMap, &T)> {
        self.orbit.maps.iter().zip(&self.values).filter(|(_, v)| !v.is_zero())
    }
}

impl<T: PartialEq> PartialEq for HFunction<T> {
    fn eq(&self, other: &Self) -> bool {
        self.orbit.maps == other.orbit.maps && self.values == other.values
    }
}

impl<T: fmt::Debug> fmt::Debug for HFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.orbit.maps.iter().zip(&self.values)).finish()
    }
}

/// `T_i⁰(σ, h)`.
pub fn apply_t0<T: Scalar>(
    i: usize,
    sigma: &Permutation,
    h: &HFunction<T>,
    xi: &[T],
    rates: &RateParams<T>,
) -> Result<HFunction<T>> {
    sigma.check_adjacent(i)?;
    if h.orbit.slots() != sigma.len() || xi.len() != sigma.len() {
        return Err(AsepError::SizeMismatch { expected: sigma.len(), got: xi.len() });
    }
    let c = T::one() + scattering(&xi[sigma.at(i) - 1], &xi[sigma.at(i + 1) - 1], rates)?;
    Ok(HFunction { orbit: h.orbit.clone(), values: h.orbit.t0_step(i, &c, &h.values, rates) })
}

/// `T_i(σ, h) = (T_i σ, T_i⁰(σ, h))`.
pub fn apply_t<T: Scalar>(
    i: usize,
    sigma: &Permutation,
    h: &HFunction<T>,
    xi: &[T],
    rates: &RateParams<T>,
) -> Result<(Permutation, HFunction<T>)> {
    let h2 = apply_t0(i, sigma, h, xi, rates)?;
    Ok((sigma.swap_slots(i)?, h2))
}

/// `h_σ` along the canonical reduced word of `σ`.
pub fn compute_h<T: Scalar>(
    sigma: &Permutation,
    nu: &SpeciesMap,
    xi: &[T],
    rates: &RateParams<T>,
) -> Result<HFunction<T>> {
    compute_h_with_word(sigma, &sigma.canonical_word(), nu, xi, rates)
}

/// `h_σ = T_{j_1}⁰ T_{j_2} ⋯ T_{j_m}(e, δ_ν)` for a word that evaluates to `σ`.
pub fn compute_h_with_word<T: Scalar>(
    sigma: &Permutation,
    word: &TranspositionWord,
    nu: &SpeciesMap,
    xi: &[T],
    rates: &RateParams<T>,
) -> Result<HFunction<T>> {
    let n = sigma.len();
    if nu.len() != n {
        return Err(AsepError::SizeMismatch { expected: n, got: nu.len() });
    }
    if word.evaluate(n)? != *sigma {
        return Err(AsepError::WordMismatch);
    }
    let orbit = Arc::new(Orbit::new(nu));
    let mut h = HFunction::delta(orbit, nu)?;
    let mut rho = Permutation::identity(n);
    for &i in word.indices.iter().rev() {
        let (next_rho, next_h) = apply_t(i, &rho, &h, xi, rates)?;
        rho = next_rho;
        h = next_h;
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PlanStep {
    pub(crate) target: usize,
    pub(crate) parent: usize,
    pub(crate) slot: usize,
    /// `c = 1 + S(ξ_a, ξ_b)` with `a = parent(slot) < b = parent(slot + 1)`.
    pub(crate) a: usize,
    pub(crate) b: usize,
}

/// Precomputed traversal of `𝕊_N` by length, used to fill a whole
/// [`CoeffTable`] with one `T_i⁰` step per permutation.
#[derive(Debug)]
pub struct HPlan {
    n: usize,
    orbit: Arc<Orbit>,
    nu_index: usize,
    steps: Vec<PlanStep>,
}

impl HPlan {
    pub fn new(nu: &SpeciesMap) -> Result<Self> {
        let n = nu.len();
        if n == 0 {
            return Err(AsepError::Precondition("empty species map".into()));
        }
        let orbit = Arc::new(Orbit::new(nu));
        let nu_index = orbit.index_of(nu).unwrap();
        let mut perms: Vec<Permutation> = Permutation::all(n).collect();
        perms.sort_by_key(Permutation::length);
        let mut steps = Vec::with_capacity(perms.len().saturating_sub(1));
        for sigma in perms.iter().skip(1) {
            let slot = (1..n).find(|&i| sigma.at(i) > sigma.at(i + 1)).unwrap();
            let parent = sigma.swap_slots(slot)?;
            steps.push(PlanStep {
                target: sigma.lex_rank(),
                parent: parent.lex_rank(),
                slot,
                a: parent.at(slot),
                b: parent.at(slot + 1),
            });
        }
        Ok(Self { n, orbit, nu_index, steps })
    }

    pub fn orbit(&self) -> &Arc<Orbit> {
        &self.orbit
    }

    pub fn slots(&self) -> usize {
        self.n
    }

    /// Steps in length order; each target has one more inversion than its
    /// parent, so `A_target = A_parent · S(ξ_b, ξ_a)`.
    pub(crate) fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    /// Fills `out` with `h_σ^π` at flat index `rank(σ) * |orbit| + k`.
    pub fn evaluate_into<T: Scalar>(&self, pairs: &PairFactors<T>, rates: &RateParams<T>, out: &mut Vec<T>) {
        let m = self.orbit.len();
        out.clear();
        out.resize(factorial(self.n) * m, T::zero());
        out[self.nu_index] = T::one();
        for step in &self.steps {
            let c = pairs.get(step.a, step.b);
            let src = step.parent * m;
            let next = self.orbit.t0_step(step.slot, c, &out[src..src + m], rates);
            let dst = step.target * m;
            out[dst..dst + m].clone_from_slice(&next);
        }
    }
}

/// `h_σ^π` for every `σ ∈ 𝕊_N` and every `π` in the orbit of `ν`.
pub struct CoeffTable<T> {
    n: usize,
    orbit: Arc<Orbit>,
    values: Vec<T>,
}

impl<T: Scalar> CoeffTable<T> {
    pub fn get(&self, sigma: &Permutation, pi: &SpeciesMap) -> Option<&T> {
        let k = self.orbit.index_of(pi)?;
        if sigma.len() != self.n {
            return None;
        }
        Some(&self.values[sigma.lex_rank() * self.orbit.len() + k])
    }

    pub fn h_function(&self, sigma: &Permutation) -> HFunction<T> {
        let m = self.orbit.len();
        let r = sigma.lex_rank();
        HFunction { orbit: self.orbit.clone(), values: self.values[r * m..(r + 1) * m].to_vec() }
    }

    /// `[{sigma, pi, value}, …]` in the order of [`CoeffTable::entries`].
    pub fn to_json(&self) -> serde_json::Value {
        self.entries()
            .map(|(sigma, pi, v)| serde_json::json!({ "sigma": sigma, "pi": pi, "value": v.to_json() }))
            .collect()
    }

    /// Rows `(σ, π, h_σ^π)` with `σ` in lexicographic order.
    pub fn entries(&self) -> impl Iterator<Item = (Permutation, &SpeciesMap, &T)> {
        let m = self.orbit.len();
        Permutation::all(self.n).enumerate().flat_map(move |(r, s)| {
            self.orbit.maps.iter().enumerate().map(move |(k, pi)| (s.clone(), pi, &self.values[r * m + k]))
        })
    }
}

/// Batch construction of all `h_σ` by traversal on adjacent transpositions.
pub fn compute_h_table<T: Scalar>(nu: &SpeciesMap, xi: &[T], rates: &RateParams<T>) -> Result<CoeffTable<T>> {
    if xi.len() != nu.len() {
        return Err(AsepError::SizeMismatch { expected: nu.len(), got: xi.len() });
    }
    let plan = HPlan::new(nu)?;
    let pairs = PairFactors::ascending(xi, rates)?;
    let mut values = Vec::new();
    plan.evaluate_into(&pairs, rates, &mut values);
    Ok(CoeffTable { n: nu.len(), orbit: plan.orbit.clone(), values })
}

/// `A_σ^π = h_σ^π A_σ`; zero when `π` is outside the orbit of `ν`.
pub fn compute_a_pi<T: Scalar>(
    sigma: &Permutation,
    pi: &SpeciesMap,
    nu: &SpeciesMap,
    xi: &[T],
    rates: &RateParams<T>,
) -> Result<T> {
    if pi.len() != nu.len() {
        return Err(AsepError::SizeMismatch { expected: nu.len(), got: pi.len() });
    }
    let h = compute_h(sigma, nu, xi, rates)?.get(pi);
    if h.is_zero() {
        return Ok(h);
    }
    Ok(h * amplitude(sigma, xi, rates)?)
}

/// One relation of the braid presentation, as a pair of words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "relation", rename_all = "snake_case")]
pub enum BraidRelation {
    /// `T_i T_i = I`
    Involution { i: usize },
    /// `T_i T_j = T_j T_i`, `|i − j| > 1`
    FarCommutation { i: usize, j: usize },
    /// `T_i T_{i+1} T_i = T_{i+1} T_i T_{i+1}`
    Braid { i: usize },
}

impl BraidRelation {
    pub fn sides(&self) -> (Vec<usize>, Vec<usize>) {
        match *self {
            BraidRelation::Involution { i } => (vec![i, i], vec![]),
            BraidRelation::FarCommutation { i, j } => (vec![i, j], vec![j, i]),
            BraidRelation::Braid { i } => (vec![i, i + 1, i], vec![i + 1, i, i + 1]),
        }
    }

    pub fn all(n: usize) -> Vec<BraidRelation> {
        let mut out = Vec::new();
        for i in 1..n {
            out.push(BraidRelation::Involution { i });
        }
        for i in 1..n {
            for j in i + 2..n {
                out.push(BraidRelation::FarCommutation { i, j });
            }
        }
        for i in 1..n.saturating_sub(1) {
            out.push(BraidRelation::Braid { i });
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BraidCounterexample {
    pub relation: BraidRelation,
    pub nu: SpeciesMap,
    pub sigma: Permutation,
    pub basis: SpeciesMap,
    pub at: SpeciesMap,
    pub lhs: serde_json::Value,
    pub rhs: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct BraidReport {
    pub n: usize,
    /// Number of `(ν, σ, δ_π)` triples each relation family was applied to.
    pub involution_checks: usize,
    pub far_commutation_checks: usize,
    pub braid_checks: usize,
    pub counterexample: Option<BraidCounterexample>,
}

impl BraidReport {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Species maps `ν` with nondecreasing labels using every value `1..=M`,
/// one per label composition of `n`; together their orbits cover every
/// equality/order pattern of adjacent labels.
pub fn packed_species_maps(n: usize) -> Vec<SpeciesMap> {
    if n == 0 {
        return vec![];
    }
    (0..1u32 << (n - 1))
        .map(|mask| {
            let mut label = 1;
            let mut labels = vec![1];
            for k in 0..n - 1 {
                if mask & (1 << k) != 0 {
                    label += 1;
                }
                labels.push(label);
            }
            SpeciesMap { labels }
        })
        .collect()
}

fn apply_word<T: Scalar>(
    word: &[usize],
    sigma: &Permutation,
    h: &HFunction<T>,
    pairs: &PairFactors<T>,
    rates: &RateParams<T>,
) -> (Permutation, HFunction<T>) {
    let mut s = sigma.clone();
    let mut values = h.values.clone();
    for &i in word.iter().rev() {
        let c = pairs.get(s.at(i), s.at(i + 1));
        values = h.orbit.t0_step(i, c, &values, rates);
        s = s.swap_slots(i).unwrap();
    }
    (s, HFunction { orbit: h.orbit.clone(), values })
}

/// Applies both sides of every braid relation on `ℋ = 𝕊_N × ℋ₀` to every
/// `(σ, δ_π)` and compares. Species maps range over `nus`, or over
/// [`packed_species_maps`] when `nus` is empty.
pub fn verify_braid<T: Scalar>(
    n: usize,
    xi: &[T],
    rates: &RateParams<T>,
    nus: &[SpeciesMap],
) -> Result<BraidReport> {
    if xi.len() != n {
        return Err(AsepError::SizeMismatch { expected: n, got: xi.len() });
    }
    if n < 2 {
        return Err(AsepError::Precondition("braid relations need N >= 2".into()));
    }
    let pairs = PairFactors::new(xi, rates)?;
    let nus = if nus.is_empty() { packed_species_maps(n) } else { nus.to_vec() };
    let relations = BraidRelation::all(n);
    let mut report = BraidReport { n, involution_checks: 0, far_commutation_checks: 0, braid_checks: 0, counterexample: None };
    for nu in &nus {
        if nu.len() != n {
            return Err(AsepError::SizeMismatch { expected: n, got: nu.len() });
        }
        let orbit = Arc::new(Orbit::new(nu));
        for sigma in Permutation::all(n) {
            for basis in orbit.maps() {
                let h = HFunction::delta(orbit.clone(), basis)?;
                for rel in &relations {
                    let (lw, rw) = rel.sides();
                    let (ls, lh) = apply_word(&lw, &sigma, &h, &pairs, rates);
                    let (rs, rh) = apply_word(&rw, &sigma, &h, &pairs, rates);
                    debug_assert_eq!(ls, rs);
                    match rel {
                        BraidRelation::Involution { .. } => report.involution_checks += 1,
                        BraidRelation::FarCommutation { .. } => report.far_commutation_checks += 1,
                        BraidRelation::Braid { .. } => report.braid_checks += 1,
                    }
                    if let Some(k) = (0..orbit.len()).find(|&k| lh.values[k] != rh.values[k]) {
                        report.counterexample = Some(BraidCounterexample {
                            relation: rel.clone(),
                            nu: nu.clone(),
                            sigma: sigma.clone(),
                            basis: basis.clone(),
                            at: orbit.maps[k].clone(),
                            lhs: lh.values[k].to_json(),
                            rhs: rh.values[k].to_json(),
                        });
                        return Ok(report);
                    }
                }
            }
        }
    }
    Ok(report)
}

/// One nonzero summand `W_𝓘(π)` of the W-product expansion of `h_σ^π`.
#[derive(Debug, Clone, PartialEq)]
pub struct WTerm<T> {
    /// 1-based word positions contributing a `V` factor; all others contribute `U`.
    pub selected: Vec<usize>,
    pub value: T,
}

/// `c_ℓ = 1 + S(ξ_{ρ_ℓ(j_ℓ)}, ξ_{ρ_ℓ(j_ℓ+1)})` with `ρ_ℓ = T_{j_{ℓ+1}} ⋯ T_{j_m} e`.
fn word_step_factors<T: Scalar>(word: &TranspositionWord, xi: &[T], rates: &RateParams<T>) -> Result<Vec<T>> {
    let n = xi.len();
    let m = word.len();
    let mut c = vec![T::zero(); m];
    let mut rho = Permutation::identity(n);
    for l in (0..m).rev() {
        let j = word.indices[l];
        rho.check_adjacent(j)?;
        c[l] = T::one() + scattering(&xi[rho.at(j) - 1], &xi[rho.at(j + 1) - 1], rates)?;
        rho = rho.swap_slots(j)?;
    }
    Ok(c)
}

/// Nonzero summands of `h_σ^π = Σ_𝓘 W_𝓘(π) δ_{ν∘T_{i_1}∘⋯∘T_{i_n}}(π)` for the
/// given word, restricted to those whose indicator is supported at `π`.
///
/// Each word position contributes either `U = 1 − c_ℓ β_{j_ℓ}` or
/// `V = c_ℓ α_{j_ℓ}`, with `α`/`β` evaluated at `π` composed with the
/// transpositions of the `V` positions to its left.
pub fn w_terms<T: Scalar>(
    word: &TranspositionWord,
    nu: &SpeciesMap,
    pi: &SpeciesMap,
    xi: &[T],
    rates: &RateParams<T>,
) -> Result<Vec<WTerm<T>>> {
    if nu.len() != xi.len() || pi.len() != xi.len() {
        return Err(AsepError::SizeMismatch { expected: xi.len(), got: nu.len().max(pi.len()) });
    }
    let c = word_step_factors(word, xi, rates)?;
    let mut out = Vec::new();
    if !pi.same_multiset(nu) {
        return Ok(out);
    }
    let mut selected = Vec::new();
    w_dfs(word, &c, nu, rates, 0, pi.clone(), T::one(), &mut selected, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn w_dfs<T: Scalar>(
    word: &TranspositionWord,
    c: &[T],
    nu: &SpeciesMap,
    rates: &RateParams<T>,
    l: usize,
    cur: SpeciesMap,
    acc: T,
    selected: &mut Vec<usize>,
    out: &mut Vec<WTerm<T>>,
) {
    if l == word.len() {
        if cur == *nu && !acc.is_zero() {
            out.push(WTerm { selected: selected.clone(), value: acc });
        }
        return;
    }
    let j = word.indices[l];
    let kind = RateKind::alpha(cur.at(j), cur.at(j + 1));
    // U branch
    let u = T::one() - c[l].clone() * kind.flip().value(rates);
    w_dfs(word, c, nu, rates, l + 1, cur.clone(), acc.clone() * u, selected, out);
    // V branch; α = 0 kills the whole subtree
    if kind != RateKind::Zero {
        let v = c[l].clone() * kind.value(rates);
        let next = cur.swap(j).unwrap();
        selected.push(l + 1);
        w_dfs(word, c, nu, rates, l + 1, next, acc * v, selected, out);
        selected.pop();
    }
}

/// `h_σ` assembled from the W-product expansion along `word`.
pub fn h_via_w_products<T: Scalar>(
    sigma: &Permutation,
    word: &TranspositionWord,
    nu: &SpeciesMap,
    xi: &[T],
    rates: &RateParams<T>,
) -> Result<HFunction<T>> {
    let n = sigma.len();
    if word.evaluate(n)? != *sigma {
        return Err(AsepError::WordMismatch);
    }
    let orbit = Arc::new(Orbit::new(nu));
    let mut values = Vec::with_capacity(orbit.len());
    for pi in orbit.maps() {
        let terms = w_terms(word, nu, pi, xi, rates)?;
        values.push(terms.into_iter().fold(T::zero(), |acc, t| acc + t.value));
    }
    HFunction::from_values(orbit, values)
}

/// Closed form of `h_σ^π` for one second-class particle (species 1, all
/// others species 2) starting in slot `nu_pos ∈ {1, 2}` and ending in slot `j`.
pub fn h_second_class<T: Scalar>(
    sigma: &Permutation,
    nu_pos: usize,
    j: usize,
    xi: &[T],
    rates: &RateParams<T>,
) -> Result<T> {
    let n = sigma.len();
    if xi.len() != n {
        return Err(AsepError::SizeMismatch { expected: n, got: xi.len() });
    }
    if j == 0 || j > n {
        return Err(AsepError::IndexOutOfRange { index: j, max: n });
    }
    let (p, q) = (rates.p().clone(), rates.q().clone());
    let inv = sigma.inverse();
    let x = |k: usize| &xi[k - 1];
    let s = |a: usize, slot: usize| scattering(x(a), x(sigma.at(slot)), rates);
    // q (1 + S(ξ_a, ξ_{σ(k)}))
    let hop = |a: usize, k: usize| -> Result<T> { Ok(q.clone() * (T::one() + s(a, k)?)) };
    // p − q S(ξ_a, ξ_{σ(k)})
    let stay = |a: usize, k: usize| -> Result<T> { Ok(p.clone() - q.clone() * s(a, k)?) };
    // q − p S(ξ_a, ξ_{σ(k)})
    let cross = |a: usize, k: usize| -> Result<T> { Ok(q.clone() - p.clone() * s(a, k)?) };
    let hops = |a: usize, range: std::ops::Range<usize>| -> Result<T> {
        range.into_iter().try_fold(T::one(), |acc, k| Ok(acc * hop(a, k)?))
    };

    match nu_pos {
        1 => {
            if inv.at(1) < j {
                return Ok(T::zero());
            }
            Ok(stay(1, j)? * hops(1, 1..j)?)
        }
        2 => {
            if n < 2 {
                return Err(AsepError::IndexOutOfRange { index: 2, max: n });
            }
            if inv.at(1) < j || inv.at(2) + sigma.iota(2)? < j {
                return Err(AsepError::Precondition(format!(
                    "closed form for a second-class particle starting in slot 2 needs \
                     σ⁻¹(1) ≥ j and σ⁻¹(2) + ι(2) ≥ j (σ = {sigma}, j = {j})"
                )));
            }
            let mut total = T::zero();
            for i in 1..j {
                total = total
                    + hops(2, 1..i)?
                        * stay(2, i)?
                        * cross(1, i)?
                        * hops(1, i + 1..j)?
                        * stay(1, j)?;
            }
            let tail = hops(2, 1..j)? * stay(2, j)? * p.clone() * (T::one() + s(1, j)?);
            Ok(total + tail)
        }
        _ => Err(AsepError::Precondition(format!("second-class start slot must be 1 or 2, got {nu_pos}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn perm(v: &[usize]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    fn sp(v: &[u32]) -> SpeciesMap {
        SpeciesMap::try_from(v.to_vec()).unwrap()
    }

    fn random_xi(rng: &mut ChaCha8Rng, n: usize) -> Vec<BigRational> {
        (0..n).map(|_| r(rng.gen_range(-25..=25), rng.gen_range(1..=19))).collect()
    }

    #[test]
    fn species_map_validation_and_orbit() {
        assert!(SpeciesMap::new(vec![0, 1], 2).is_err());
        assert!(SpeciesMap::new(vec![3, 1], 2).is_err());
        let orbit = sp(&[2, 1, 2]).orbit();
        assert_eq!(orbit, vec![sp(&[1, 2, 2]), sp(&[2, 1, 2]), sp(&[2, 2, 1])]);
        assert_eq!(sp(&[1, 2, 3, 4]).orbit().len(), 24);
        assert_eq!(sp(&[1, 1, 2, 2]).orbit().len(), 6);
    }

    #[test]
    fn alpha_beta_table() {
        let rates = RateParams::new(r(3, 10)).unwrap();
        assert_eq!(alpha_beta(1, &sp(&[1, 1]), &rates).unwrap(), (r(0, 1), r(0, 1)));
        assert_eq!(alpha_beta(1, &sp(&[1, 2]), &rates).unwrap(), (r(3, 10), r(7, 10)));
        assert_eq!(alpha_beta(1, &sp(&[2, 1]), &rates).unwrap(), (r(7, 10), r(3, 10)));
        assert!(alpha_beta(2, &sp(&[2, 1]), &rates).is_err());
        assert!(alpha_beta(0, &sp(&[2, 1]), &rates).is_err());
        for pi in sp(&[1, 2, 3]).orbit() {
            for i in 1..3 {
                let (a, b) = alpha_beta(i, &pi, &rates).unwrap();
                let (a2, _) = alpha_beta(i, &pi.swap(i).unwrap(), &rates).unwrap();
                assert_eq!(b, a2);
                assert_eq!(a + b, r(1, 1));
            }
        }
    }

    #[test]
    fn t0_examples() {
        let rates = RateParams::new(r(2, 5)).unwrap();
        let xi = vec![r(1, 3), r(-1, 4), r(2, 7)];
        let e = Permutation::identity(3);

        let nu1 = SpeciesMap::uniform(3);
        let h = HFunction::delta(Arc::new(Orbit::new(&nu1)), &nu1).unwrap();
        assert_eq!(apply_t0(1, &e, &h, &xi, &rates).unwrap(), h);

        let nu = sp(&[2, 2, 1]);
        let h = HFunction::delta(Arc::new(Orbit::new(&nu)), &nu).unwrap();
        let out = apply_t0(1, &e, &h, &xi, &rates).unwrap();
        // slots 1 and 2 carry equal labels at ν
        assert_eq!(out.get(&nu), r(1, 1));

        let nu = sp(&[1, 2]);
        let xi2 = vec![r(1, 3), r(-1, 4)];
        let h = HFunction::delta(Arc::new(Orbit::new(&nu)), &nu).unwrap();
        let out = apply_t0(1, &Permutation::identity(2), &h, &xi2, &rates).unwrap();
        let expected = (r(1, 1) + scattering(&xi2[0], &xi2[1], &rates).unwrap()) * rates.q().clone();
        assert_eq!(out.get(&sp(&[2, 1])), expected);
    }

    #[test]
    fn h_basic_cases() {
        let rates = RateParams::new(r(1, 3)).unwrap();
        let xi = vec![r(1, 5), r(-2, 7), r(3, 11), r(1, 9)];
        let nu = sp(&[2, 1, 2, 2]);
        let h = compute_h(&Permutation::identity(4), &nu, &xi, &rates).unwrap();
        assert_eq!(h, HFunction::delta(h.orbit().clone(), &nu).unwrap());

        let uni = SpeciesMap::uniform(4);
        for s in Permutation::all(4) {
            let h = compute_h(&s, &uni, &xi, &rates).unwrap();
            assert_eq!(h.values(), &[r(1, 1)]);
        }
    }

    #[test]
    fn table_matches_recursion_and_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=4 {
            for nu in packed_species_maps(n) {
                let rates = RateParams::new(r(rng.gen_range(1..=9), 10)).unwrap();
                let xi = random_xi(&mut rng, n);
                let Ok(table) = compute_h_table(&nu, &xi, &rates) else { continue };
                for s in Permutation::all(n) {
                    let direct = compute_h(&s, &nu, &xi, &rates).unwrap();
                    assert_eq!(table.h_function(&s), direct, "n={n} nu={nu:?} sigma={s}");
                }
            }
        }
    }

    #[test]
    fn table_json_dump() {
        let rates = RateParams::new(r(1, 3)).unwrap();
        let table = compute_h_table(&sp(&[1, 2]), &[r(1, 2), r(-1, 3)], &rates).unwrap();
        let rows = table.to_json();
        let rows = rows.as_array().unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0], serde_json::json!({ "sigma": [1, 2], "pi": [1, 2], "value": "1/1" }));
        assert_eq!(rows[1]["value"], "0/1");
    }

    #[test]
    fn a_pi_cases() {
        let rates = RateParams::new(r(1, 4)).unwrap();
        let xi = vec![r(1, 5), r(-2, 7), r(3, 11)];
        let nu = sp(&[1, 2, 2]);
        let e = Permutation::identity(3);
        assert_eq!(compute_a_pi(&e, &nu, &nu, &xi, &rates).unwrap(), r(1, 1));
        assert_eq!(compute_a_pi(&e, &sp(&[2, 1, 2]), &nu, &xi, &rates).unwrap(), r(0, 1));
        assert_eq!(compute_a_pi(&e, &sp(&[1, 1, 2]), &nu, &xi, &rates).unwrap(), r(0, 1));
        let uni = SpeciesMap::uniform(3);
        for s in Permutation::all(3) {
            assert_eq!(
                compute_a_pi(&s, &uni, &uni, &xi, &rates).unwrap(),
                amplitude(&s, &xi, &rates).unwrap()
            );
        }
    }

    #[test]
    fn word_mismatch_rejected() {
        let rates = RateParams::new(r(1, 2)).unwrap();
        let xi = vec![r(1, 5), r(-2, 7), r(3, 11)];
        let err = compute_h_with_word(&perm(&[2, 1, 3]), &TranspositionWord::new(vec![2]), &sp(&[1, 2, 2]), &xi, &rates);
        assert_eq!(err.unwrap_err(), AsepError::WordMismatch);
    }

    #[test]
    fn packed_maps_cover_compositions() {
        let maps = packed_species_maps(4);
        assert_eq!(maps.len(), 8);
        assert!(maps.contains(&sp(&[1, 1, 1, 1])));
        assert!(maps.contains(&sp(&[1, 2, 3, 4])));
        assert!(maps.contains(&sp(&[1, 1, 2, 3])));
    }

    #[test]
    fn braid_relations_small() {
        let rates = RateParams::new(r(1, 3)).unwrap();
        let xi = vec![r(1, 5), r(-2, 7), r(3, 11)];
        let rep = verify_braid(3, &xi, &rates, &[]).unwrap();
        assert!(rep.passed(), "{:?}", rep.counterexample);
        assert!(rep.braid_checks > 0);
        assert_eq!(rep.far_commutation_checks, 0);
    }

    #[test]
    fn braid_detects_a_broken_operator() {
        // Replacing p by an inconsistent rate set (p + q ≠ 1) breaks relation (i).
        let bad = RateParams::new(r(1, 3)).unwrap();
        let bad = RateParams::unchecked(bad.p().clone(), r(1, 5));
        let xi = vec![r(1, 5), r(-2, 7), r(3, 11)];
        let rep = verify_braid(3, &xi, &bad, &[sp(&[1, 2, 3])]).unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn w_products_two_letter_word() {
        // T_j T_i (e, δ_ν) splits into the four W-products U_jU_i, U_jV_i, V_jU_i, V_jV_i.
        let rates = RateParams::new(r(2, 7)).unwrap();
        let xi = vec![r(1, 5), r(-2, 7), r(3, 11)];
        let nu = sp(&[1, 2, 3]);
        let word = TranspositionWord::new(vec![2, 1]);
        let sigma = word.evaluate(3).unwrap();
        let h = compute_h_with_word(&sigma, &word, &nu, &xi, &rates).unwrap();
        let mut count = 0;
        for pi in nu.orbit() {
            let terms = w_terms(&word, &nu, &pi, &xi, &rates).unwrap();
            count += terms.len();
            let sum = terms.iter().fold(r(0, 1), |a, t| a + t.value.clone());
            assert_eq!(sum, h.get(&pi));
        }
        assert_eq!(count, 4);
    }

    #[test]
    fn second_class_start_slot_one_equal_j() {
        // σ⁻¹(1) = j makes the leading factor p − q S(ξ_1, ξ_1) = 1.
        let rates = RateParams::new(r(3, 8)).unwrap();
        let xi = vec![r(1, 5), r(-2, 7), r(3, 11)];
        let sigma = perm(&[2, 1, 3]);
        let nu = sp(&[1, 2, 2]);
        let h = compute_h(&sigma, &nu, &xi, &rates).unwrap();
        let closed = h_second_class(&sigma, 1, 2, &xi, &rates).unwrap();
        let hop = rates.q().clone() * (r(1, 1) + scattering(&xi[0], &xi[1], &rates).unwrap());
        assert_eq!(closed, hop);
        assert_eq!(closed, h.get(&sp(&[2, 1, 2])));
        assert_eq!(h_second_class(&sigma, 1, 3, &xi, &rates).unwrap(), r(0, 1));
    }

    #[test]
    fn second_class_preconditions() {
        let rates = RateParams::new(r(3, 8)).unwrap();
        let xi = vec![r(1, 5), r(-2, 7), r(3, 11)];
        let e = Permutation::identity(3);
        assert!(matches!(h_second_class(&e, 2, 2, &xi, &rates), Err(AsepError::Precondition(_))));
        assert!(matches!(h_second_class(&e, 3, 1, &xi, &rates), Err(AsepError::Precondition(_))));
        assert!(matches!(h_second_class(&e, 1, 4, &xi, &rates), Err(AsepError::IndexOutOfRange { .. })));
    }
}
