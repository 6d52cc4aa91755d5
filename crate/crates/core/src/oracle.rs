//! Exact finite-window ground truth: the multispecies generator restricted to
//! configurations inside `[lo, hi]`, exponentiated by uniformization.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::bethe::RateParams;
use crate::error::{AsepError, Result};
use crate::transition::{Configuration, ProblemInstance};

/// Largest state space the oracle will enumerate.
pub const MAX_STATES: usize = 4_000_000;

/// Poisson tail mass below which uniformization stops.
pub const UNIFORMIZATION_TAIL: f64 = 1e-13;

/// Largest `Λ·dt` per uniformization segment.
const MAX_SEGMENT: f64 = 50.0;

/// Moves out of `c` on the infinite lattice with their rates.
///
/// A particle of species `s` attempts right at rate `p` and left at rate `q`.
/// It moves onto an empty site, swaps with a neighbour of species `s′ < s`
/// and is blocked otherwise.
pub fn transitions(c: &Configuration, rates: &RateParams<f64>) -> Vec<(Configuration, f64)> {
    let (p, q) = (*rates.p(), *rates.q());
    let sites = c.sites();
    let labels = c.species().labels();
    let n = sites.len();
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        for (dir, rate) in [(1i64, p), (-1i64, q)] {
            if rate == 0.0 {
                continue;
            }
            let dest = sites[i] + dir;
            let neighbour = if dir > 0 { i + 1 } else { i.wrapping_sub(1) };
            let occupied = neighbour < n && sites[neighbour] == dest;
            if !occupied {
                let mut s = sites.to_vec();
                s[i] = dest;
                out.push((Configuration::from_parts(s, labels.to_vec()), rate));
            } else if labels[i] > labels[neighbour] {
                let mut l = labels.to_vec();
                l.swap(i, neighbour);
                out.push((Configuration::from_parts(sites.to_vec(), l), rate));
            }
        }
    }
    out
}

pub fn exit_rate(c: &Configuration, rates: &RateParams<f64>) -> f64 {
    transitions(c, rates).iter().map(|(_, r)| r).sum()
}

/// Configurations `s′` with a move `s′ → c`, with the rate of that move.
pub fn predecessors(c: &Configuration, rates: &RateParams<f64>) -> Vec<(Configuration, f64)> {
    let sites = c.sites();
    let labels = c.species().labels();
    let n = sites.len();
    let mut candidates = Vec::new();
    for i in 0..n {
        for dir in [1i64, -1] {
            let from = sites[i] + dir;
            if !sites.contains(&from) {
                let mut s = sites.to_vec();
                s[i] = from;
                candidates.push(Configuration::from_parts(s, labels.to_vec()));
            }
        }
        if i + 1 < n && sites[i + 1] == sites[i] + 1 && labels[i] != labels[i + 1] {
            let mut l = labels.to_vec();
            l.swap(i, i + 1);
            candidates.push(Configuration::from_parts(sites.to_vec(), l));
        }
    }
    candidates
        .into_iter()
        .filter_map(|s| {
            let rate: f64 = transitions(&s, rates).iter().filter(|(d, _)| d == c).map(|(_, r)| r).sum();
            (rate > 0.0).then_some((s, rate))
        })
        .collect()
}

/// `P(Poisson(t) ≥ d)`, summed over the tail terms directly.
pub fn poisson_tail(t: f64, d: u64) -> f64 {
    if d == 0 {
        return 1.0;
    }
    if t <= 0.0 {
        return 0.0;
    }
    let ln_fact: f64 = (1..=d).map(|k| (k as f64).ln()).sum();
    let mut term = (-t + d as f64 * t.ln() - ln_fact).exp();
    let mut sum = 0.0;
    let mut k = d;
    while term > 0.0 {
        sum += term;
        k += 1;
        term *= t / k as f64;
        if k as f64 > t && term < 1e-18 * sum {
            break;
        }
    }
    sum.min(1.0)
}

/// `[min Y − Δ, max Y + Δ]` with the least `Δ ≥ 1` such that
/// `N · P(Poisson(t) ≥ Δ) ≤ leak_tol`.
pub fn window_for(initial: &Configuration, t: f64, leak_tol: f64) -> Result<(i64, i64)> {
    if !(leak_tol > 0.0 && leak_tol < 1.0) {
        return Err(AsepError::Precondition(format!("leak tolerance {leak_tol} must lie in (0, 1)")));
    }
    let n = initial.len() as f64;
    let mut delta = 1u64;
    while n * poisson_tail(t, delta) > leak_tol {
        delta += 1;
    }
    let sites = initial.sites();
    Ok((sites[0] - delta as i64, sites[sites.len() - 1] + delta as i64))
}

/// Bound on the probability that some particle of `initial` leaves `window`
/// by time `t`.
pub fn leakage_bound(initial: &Configuration, t: f64, window: (i64, i64)) -> f64 {
    let sites = initial.sites();
    let slack = (sites[0] - window.0).min(window.1 - sites[sites.len() - 1]);
    if slack < 0 {
        return 1.0;
    }
    (initial.len() as f64 * poisson_tail(t, slack as u64)).min(1.0)
}

/// Every configuration with sites in the window and species in the orbit of
/// the initial species map, ordered by sites then species.
#[derive(Debug, Clone)]
pub struct StateSpace {
    window: (i64, i64),
    states: Vec<Configuration>,
    index: HashMap<Configuration, usize>,
}

impl StateSpace {
    pub fn new(initial: &Configuration, window: (i64, i64)) -> Result<Self> {
        let n = initial.len();
        let (lo, hi) = window;
        let width = if hi >= lo { (hi - lo + 1) as usize } else { 0 };
        let orbit = initial.species().orbit();
        let count = binomial(width, n).saturating_mul(orbit.len());
        if count > MAX_STATES {
            return Err(AsepError::Infeasible(format!("{count} states in window [{lo}, {hi}]")));
        }
        let mut states = Vec::with_capacity(count);
        for sites in subsets(lo, hi, n) {
            for pi in &orbit {
                states.push(Configuration::from_parts(sites.clone(), pi.labels().to_vec()));
            }
        }
        let index = states.iter().cloned().enumerate().map(|(k, c)| (c, k)).collect();
        Ok(Self { window, states, index })
    }

    pub fn window(&self) -> (i64, i64) {
        self.window
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Configuration] {
        &self.states
    }

    pub fn index_of(&self, c: &Configuration) -> Option<usize> {
        self.index.get(c).copied()
    }

    pub fn contains_sites(&self, c: &Configuration) -> bool {
        let s = c.sites();
        s[0] >= self.window.0 && s[s.len() - 1] <= self.window.1
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut r: usize = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// Strictly increasing `k`-tuples in `[lo, hi]`, lexicographically.
pub fn subsets(lo: i64, hi: i64, k: usize) -> impl Iterator<Item = Vec<i64>> {
    let mut cur: Option<Vec<i64>> = if hi - lo + 1 >= k as i64 { Some((0..k as i64).map(|i| lo + i).collect()) } else { None };
    std::iter::from_fn(move || {
        let out = cur.clone()?;
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                cur = None;
                break;
            }
            i -= 1;
            let limit = hi - (k - 1 - i) as i64;
            if next[i] < limit {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                cur = Some(next);
                break;
            }
        }
        Some(out)
    })
}

/// Truncated generator in compressed rows, with the transposed pattern for
/// pull-style products. Moves leaving the window are dropped.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    diagonal: Vec<f64>,
    in_ptr: Vec<usize>,
    in_rows: Vec<usize>,
    in_rates: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    /// Off-diagonal entries `(target, rate)` of a row.
    pub fn row(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[s]..self.row_ptr[s + 1];
        self.cols[r.clone()].iter().copied().zip(self.rates[r].iter().copied())
    }

    pub fn diagonal(&self, s: usize) -> f64 {
        self.diagonal[s]
    }

    pub fn row_sum(&self, s: usize) -> f64 {
        self.diagonal[s] + self.row(s).map(|(_, r)| r).sum::<f64>()
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diagonal.iter().fold(0.0, |m, d| m.max(-d))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSettings {
    pub window: (i64, i64),
    pub states: usize,
    pub uniformization_rate: f64,
    pub segments: usize,
    pub terms: usize,
    pub truncation_tail: f64,
}

pub fn build_generator(inst: &ProblemInstance, window: (i64, i64)) -> Result<(StateSpace, GeneratorMatrix)> {
    let y = inst.initial().sites();
    if window.0 > y[0] - 1 || window.1 < y[y.len() - 1] + 1 {
        return Err(AsepError::WindowTooSmall(format!(
            "window [{}, {}] must contain the initial sites with one site of slack",
            window.0, window.1
        )));
    }
    let space = StateSpace::new(inst.initial(), window)?;
    let m = space.len();
    let mut row_ptr = Vec::with_capacity(m + 1);
    let mut cols = Vec::new();
    let mut rates = Vec::new();
    let mut diagonal = Vec::with_capacity(m);
    row_ptr.push(0);
    for s in space.states() {
        let mut exit = 0.0;
        for (dest, rate) in transitions(s, inst.rates()) {
            if let Some(j) = space.index_of(&dest) {
                cols.push(j);
                rates.push(rate);
                exit += rate;
            }
        }
        diagonal.push(-exit);
        row_ptr.push(cols.len());
    }
    let mut in_count = vec![0usize; m + 1];
    for &c in &cols {
        in_count[c + 1] += 1;
    }
    for i in 0..m {
        in_count[i + 1] += in_count[i];
    }
    let in_ptr = in_count.clone();
    let mut fill = in_count;
    let mut in_rows = vec![0usize; cols.len()];
    let mut in_rates = vec![0.0; cols.len()];
    for s in 0..m {
        for e in row_ptr[s]..row_ptr[s + 1] {
            let c = cols[e];
            in_rows[fill[c]] = s;
            in_rates[fill[c]] = rates[e];
            fill[c] += 1;
        }
    }
    Ok((space, GeneratorMatrix { row_ptr, cols, rates, diagonal, in_ptr, in_rows, in_rates }))
}

/// `δ_initial · exp(tQ)` by uniformization, split into segments with
/// `Λ·dt ≤ 50` and each series truncated once its Poisson tail falls below
/// [`UNIFORMIZATION_TAIL`] divided by the number of segments.
pub fn expm_action(q: &GeneratorMatrix, t: f64, initial: usize) -> Result<(Vec<f64>, OracleSettings)> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(AsepError::Precondition(format!("time {t} must be finite and nonnegative")));
    }
    let m = q.len();
    if initial >= m {
        return Err(AsepError::IndexOutOfRange { index: initial, max: m.saturating_sub(1) });
    }
    let lambda = q.max_exit_rate();
    let mut v = vec![0.0; m];
    v[initial] = 1.0;
    let mut settings = OracleSettings {
        window: (0, 0),
        states: m,
        uniformization_rate: lambda,
        segments: 0,
        terms: 0,
        truncation_tail: 0.0,
    };
    if t == 0.0 || lambda == 0.0 {
        return Ok((v, settings));
    }
    let segments = (lambda * t / MAX_SEGMENT).ceil().max(1.0) as usize;
    let dt = t / segments as f64;
    let tail_tol = UNIFORMIZATION_TAIL / segments as f64;
    let mu = lambda * dt;
    let stay: Vec<f64> = (0..m).map(|s| 1.0 + q.diagonal[s] / lambda).collect();
    let mut next = vec![0.0; m];
    for _ in 0..segments {
        let mut weight = (-mu).exp();
        let mut cumulative = weight;
        let mut u = v.clone();
        let mut acc: Vec<f64> = u.iter().map(|x| x * weight).collect();
        let mut j = 0usize;
        while 1.0 - cumulative > tail_tol {
            j += 1;
            next.par_iter_mut().enumerate().for_each(|(s, out)| {
                let mut x = u[s] * stay[s];
                for e in q.in_ptr[s]..q.in_ptr[s + 1] {
                    x += u[q.in_rows[e]] * q.in_rates[e] / lambda;
                }
                *out = x;
            });
            std::mem::swap(&mut u, &mut next);
            weight *= mu / j as f64;
            cumulative += weight;
            acc.par_iter_mut().zip(u.par_iter()).for_each(|(a, x)| *a += weight * x);
        }
        settings.terms += j + 1;
        settings.truncation_tail += (1.0 - cumulative).max(0.0);
        v = acc;
    }
    settings.segments = segments;
    Ok((v, settings))
}

/// Oracle probabilities on a window.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub space: StateSpace,
    pub probabilities: Vec<f64>,
    pub settings: OracleSettings,
}

impl OracleResult {
    pub fn probability(&self, c: &Configuration) -> Option<f64> {
        self.space.index_of(c).map(|k| self.probabilities[k])
    }

    pub fn total_mass(&self) -> f64 {
        self.probabilities.iter().sum()
    }
}

pub fn oracle_distribution(inst: &ProblemInstance, window: (i64, i64)) -> Result<OracleResult> {
    let (space, q) = build_generator(inst, window)?;
    let start = space.index_of(inst.initial()).expect("initial state lies in the window");
    let (probabilities, mut settings) = expm_action(&q, inst.time(), start)?;
    settings.window = window;
    Ok(OracleResult { space, probabilities, settings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::species::SpeciesMap;

    fn cfg(sites: &[i64], labels: &[u32]) -> Configuration {
        Configuration::new(sites.to_vec(), SpeciesMap::try_from(labels.to_vec()).unwrap()).unwrap()
    }

    fn inst(sites: &[i64], labels: &[u32], p: f64, t: f64) -> ProblemInstance {
        ProblemInstance::new(cfg(sites, labels), RateParams::from_p(p).unwrap(), t).unwrap()
    }

    #[test]
    fn exit_rate_examples() {
        let r = RateParams::from_p(0.7).unwrap();
        assert!((exit_rate(&cfg(&[5], &[1]), &r) - 1.0).abs() < 1e-15);
        assert!((exit_rate(&cfg(&[0, 1], &[1, 1]), &r) - 1.0).abs() < 1e-15);
        assert!((exit_rate(&cfg(&[0, 1], &[2, 1]), &r) - (0.3 + 0.7 + 0.7)).abs() < 1e-15);
        // the species-2 particle on the right swaps leftwards at rate q
        assert!((exit_rate(&cfg(&[0, 1], &[1, 2]), &r) - (0.3 + 0.7 + 0.3)).abs() < 1e-15);
        let tasep = RateParams::from_p(1.0).unwrap();
        assert_eq!(transitions(&cfg(&[0, 1], &[1, 2]), &tasep).len(), 1);
    }

    #[test]
    fn predecessors_invert_transitions() {
        let r = RateParams::from_p(0.6).unwrap();
        let c = cfg(&[0, 1, 3], &[2, 1, 2]);
        for (s, rate) in predecessors(&c, &r) {
            let back: f64 = transitions(&s, &r).iter().filter(|(d, _)| *d == c).map(|(_, x)| x).sum();
            assert_eq!(back, rate);
        }
        // every configuration one move away from c that leads to c is found
        let space = StateSpace::new(&c, (-3, 6)).unwrap();
        let mut expected = 0;
        for s in space.states() {
            if transitions(s, &r).iter().any(|(d, _)| *d == c) {
                expected += 1;
            }
        }
        assert_eq!(predecessors(&c, &r).len(), expected);
    }

    #[test]
    fn subsets_enumerate_in_order() {
        let all: Vec<_> = subsets(0, 4, 2).collect();
        assert_eq!(all.len(), 10);
        assert_eq!(all[0], vec![0, 1]);
        assert_eq!(all[9], vec![3, 4]);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsets(0, 1, 3).count(), 0);
        assert_eq!(binomial(31, 3), 4495);
    }

    #[test]
    fn generator_invariants() {
        let i = inst(&[0, 1, 3], &[2, 1, 2], 0.7, 0.5);
        let (space, q) = build_generator(&i, (-3, 6)).unwrap();
        assert_eq!(space.len(), 120 * 3);
        for s in 0..q.len() {
            assert!(q.row_sum(s).abs() <= 1e-15);
            assert!(q.row(s).count() <= 6);
            for (d, rate) in q.row(s) {
                assert!(rate > 0.0);
                let (a, b) = (&space.states()[s], &space.states()[d]);
                assert!(a.species().same_multiset(b.species()));
                assert!(b.sites().windows(2).all(|w| w[0] < w[1]));
            }
        }
        assert!(space.states().windows(2).all(|w| w[0] < w[1]));
        assert!(build_generator(&i, (0, 4)).is_err());
    }

    #[test]
    fn interior_single_particle_rows() {
        let i = inst(&[0], &[1], 0.3, 1.0);
        let (_, q) = build_generator(&i, (-5, 5)).unwrap();
        for s in 1..q.len() - 1 {
            assert!((q.diagonal(s) + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniformization_basics() {
        let i = inst(&[0, 2], &[2, 1], 0.5, 0.0);
        let o = oracle_distribution(&i, (-2, 4)).unwrap();
        assert_eq!(o.probability(i.initial()), Some(1.0));
        let i = inst(&[0, 2], &[2, 1], 0.5, 3.0);
        let o = oracle_distribution(&i, (-6, 8)).unwrap();
        assert!(o.probabilities.iter().all(|&x| x >= 0.0));
        assert!((o.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn long_horizon_is_segmented() {
        let i = inst(&[0], &[1], 0.5, 120.0);
        let o = oracle_distribution(&i, (-200, 200)).unwrap();
        assert!(o.settings.segments >= 3);
        assert!((o.total_mass() - 1.0).abs() < 1e-12);
    }

    fn free_series(p: f64, t: f64, d: i32) -> f64 {
        let q = 1.0 - p;
        let fact = |n: i32| (1..=n).map(f64::from).product::<f64>();
        let k0 = (-d).max(0);
        (k0..k0 + 60).map(|k| (q * t).powi(k) * (p * t).powi(k + d) / (fact(k) * fact(k + d))).sum::<f64>() * (-t).exp()
    }

    #[test]
    fn single_particle_matches_series() {
        for p in [0.5, 0.7, 1.0] {
            let i = inst(&[0], &[1], p, 1.0);
            let o = oracle_distribution(&i, (-20, 20)).unwrap();
            for x in -20..=20 {
                let got = o.probability(&cfg(&[x], &[1])).unwrap();
                assert!((got - free_series(p, 1.0, x as i32)).abs() < 1e-10, "p={p} x={x}");
            }
        }
    }

    #[test]
    fn poisson_tail_values() {
        assert_eq!(poisson_tail(0.0, 1), 0.0);
        assert_eq!(poisson_tail(2.0, 0), 1.0);
        assert!((poisson_tail(1.0, 1) - (1.0 - (-1f64).exp())).abs() < 1e-15);
        let direct: f64 = 1.0 - (0..3).map(|k| (-2f64).exp() * 2f64.powi(k) / [1.0, 1.0, 2.0][k as usize]).sum::<f64>();
        assert!((poisson_tail(2.0, 3) - direct).abs() < 1e-14);
    }

    #[test]
    fn window_rule() {
        let y = cfg(&[0, 1, 3], &[2, 1, 2]);
        assert_eq!(window_for(&y, 0.0, 1e-10).unwrap(), (-1, 4));
        let (lo, hi) = window_for(&y, 1.0, 1e-10).unwrap();
        let delta = (-lo) as u64;
        assert_eq!(hi, 3 + delta as i64);
        assert!(3.0 * poisson_tail(1.0, delta) <= 1e-10);
        assert!(3.0 * poisson_tail(1.0, delta - 1) > 1e-10);
        assert!(window_for(&y, 1.0, 0.0).is_err());
    }

    #[test]
    fn window_doubling_is_stable() {
        let i = inst(&[0, 1], &[2, 1], 0.7, 1.0);
        let w = window_for(i.initial(), 1.0, 1e-10).unwrap();
        let delta = -w.0;
        let wide = (w.0 - delta, w.1 + delta);
        let a = oracle_distribution(&i, w).unwrap();
        let b = oracle_distribution(&i, wide).unwrap();
        for (c, pa) in a.space.states().iter().zip(&a.probabilities) {
            assert!((pa - b.probability(c).unwrap()).abs() <= 1e-10);
        }
    }
}
