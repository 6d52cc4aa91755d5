//! Monte Carlo trajectories and goodness-of-fit against a reference law.
//!
//! Attempts arrive at total rate `N`; each picks a particle uniformly and a
//! direction (right with probability `p`), then moves, swaps or is blocked.
//! Blocked attempts are the null events of the uniformized chain, so the law
//! at time `t` is that of the generator.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AsepError, Result};
use crate::transition::{Configuration, ProblemInstance};

/// Trials per parallel chunk; chunk histograms are merged in chunk order.
const CHUNK: u64 = 4096;

/// Empirical end-state histogram of independent trajectories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialBatch {
    pub trials: u64,
    pub seed: u64,
    pub horizon: f64,
    #[serde(serialize_with = "counts_as_rows")]
    pub counts: BTreeMap<Configuration, u64>,
}

/// JSON maps need string keys; the histogram is written as `[configuration, count]` pairs.
fn counts_as_rows<S: serde::Serializer>(counts: &BTreeMap<Configuration, u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(counts.iter())
}

impl TrialBatch {
    pub fn frequency(&self, c: &Configuration) -> f64 {
        self.counts.get(c).copied().unwrap_or(0) as f64 / self.trials as f64
    }

    /// Empirical frequencies, usable as a reference for [`compare`].
    pub fn frequencies(&self) -> BTreeMap<Configuration, f64> {
        self.counts.iter().map(|(c, &k)| (c.clone(), k as f64 / self.trials as f64)).collect()
    }
}

/// Trial `i` draws from the ChaCha8 stream `i` of the generator seeded with
/// `seed`, so batches do not depend on how trials are scheduled.
pub fn simulate(inst: &ProblemInstance, trials: u64, seed: u64) -> Result<TrialBatch> {
    if trials == 0 {
        return Err(AsepError::Precondition("at least one trial is required".into()));
    }
    let n = inst.n();
    let clock = Exp::new(n as f64).map_err(|e| AsepError::Precondition(e.to_string()))?;
    let p = *inst.rates().p();
    let horizon = inst.time();
    let chunks = trials.div_ceil(CHUNK);
    let partial: Vec<BTreeMap<Configuration, u64>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut counts = BTreeMap::new();
            let mut sites = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for trial in chunk * CHUNK..((chunk + 1) * CHUNK).min(trials) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(trial);
                sites.clear();
                sites.extend_from_slice(inst.initial().sites());
                labels.clear();
                labels.extend_from_slice(inst.initial().species().labels());
                run_trial(&mut rng, &clock, p, horizon, &mut sites, &mut labels);
                *counts.entry(Configuration::from_parts(sites.clone(), labels.clone())).or_insert(0) += 1;
            }
            counts
        })
        .collect();
    let mut counts = BTreeMap::new();
    for part in partial {
        for (c, k) in part {
            *counts.entry(c).or_insert(0) += k;
        }
    }
    Ok(TrialBatch { trials, seed, horizon, counts })
}

fn run_trial(rng: &mut ChaCha8Rng, clock: &Exp<f64>, p: f64, horizon: f64, sites: &mut [i64], labels: &mut [u32]) {
    let n = sites.len();
    let mut time = clock.sample(rng);
    while time <= horizon {
        let i = rng.gen_range(0..n);
        let right = rng.gen_bool(p);
        if right {
            if i + 1 < n && sites[i + 1] == sites[i] + 1 {
                if labels[i] > labels[i + 1] {
                    labels.swap(i, i + 1);
                }
            } else {
                sites[i] += 1;
            }
        } else if i > 0 && sites[i - 1] == sites[i] - 1 {
            if labels[i] > labels[i - 1] {
                labels.swap(i, i - 1);
            }
        } else {
            sites[i] -= 1;
        }
        time += clock.sample(rng);
    }
}

/// Per-cell binomial z-scores of a batch against reference probabilities.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub trials: u64,
    pub cells: Vec<CellScore>,
    pub max_abs_z: f64,
    /// Cells with expected count at least [`MIN_EXPECTED`] and `|z| >` [`Z_LIMIT`].
    pub flagged: Vec<Configuration>,
}

impl CompareReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellScore {
    pub configuration: Configuration,
    pub observed: u64,
    pub expected: f64,
    pub z: f64,
}

pub const MIN_EXPECTED: f64 = 25.0;
pub const Z_LIMIT: f64 = 4.0;

/// Scores every cell observed in the batch or carrying positive reference
/// mass. An observed cell absent from the reference is an error.
pub fn compare(batch: &TrialBatch, reference: &BTreeMap<Configuration, f64>) -> Result<CompareReport> {
    if let Some(c) = batch.counts.keys().find(|c| !reference.contains_key(*c)) {
        return Err(AsepError::MissingReference(c.to_string()));
    }
    let n = batch.trials as f64;
    let mut cells = Vec::new();
    for (c, &prob) in reference {
        let observed = batch.counts.get(c).copied().unwrap_or(0);
        if prob <= 0.0 && observed == 0 {
            continue;
        }
        let pr = prob.clamp(0.0, 1.0);
        let expected = n * pr;
        let sd = (n * pr * (1.0 - pr)).sqrt();
        let diff = observed as f64 - expected;
        let z = if sd > 0.0 {
            diff / sd
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        cells.push(CellScore { configuration: c.clone(), observed, expected, z });
    }
    let max_abs_z = cells.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    let flagged = cells
        .iter()
        .filter(|c| c.expected >= MIN_EXPECTED && c.z.abs() > Z_LIMIT)
        .map(|c| c.configuration.clone())
        .collect();
    Ok(CompareReport { trials: batch.trials, cells, max_abs_z, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bethe::RateParams;
    use crate::oracle::{oracle_distribution, window_for};
    use crate::species::SpeciesMap;

    fn inst(sites: &[i64], labels: &[u32], p: f64, t: f64) -> ProblemInstance {
        let c = Configuration::new(sites.to_vec(), SpeciesMap::try_from(labels.to_vec()).unwrap()).unwrap();
        ProblemInstance::new(c, RateParams::from_p(p).unwrap(), t).unwrap()
    }

    #[test]
    fn time_zero_is_point_mass() {
        let i = inst(&[0, 1, 4], &[1, 2, 1], 0.5, 0.0);
        let b = simulate(&i, 100, 1).unwrap();
        assert_eq!(b.counts.len(), 1);
        assert_eq!(b.counts[i.initial()], 100);
        assert!(simulate(&i, 0, 1).is_err());
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let i = inst(&[0, 1, 2], &[2, 1, 2], 0.7, 1.0);
        let a = simulate(&i, 10_000, 42).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate(&i, 10_000, 42).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, simulate(&i, 10_000, 43).unwrap());
        assert_eq!(a.counts.values().sum::<u64>(), 10_000);
        for c in a.counts.keys() {
            assert!(c.species().same_multiset(i.initial().species()));
            assert!(c.sites().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn free_particle_drift() {
        let (p, t, trials) = (0.7, 2.0, 40_000u64);
        let b = simulate(&inst(&[0], &[1], p, t), trials, 5).unwrap();
        let mean: f64 = b.counts.iter().map(|(c, &k)| c.sites()[0] as f64 * k as f64).sum::<f64>() / trials as f64;
        // displacement = Poisson(pt) − Poisson(qt): variance t
        let se = (t / trials as f64).sqrt();
        assert!((mean - (2.0 * p - 1.0) * t).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn agrees_with_oracle() {
        let i = inst(&[0, 1, 2], &[2, 1, 2], 0.7, 0.5);
        let o = oracle_distribution(&i, window_for(i.initial(), 0.5, 1e-10).unwrap()).unwrap();
        let reference: BTreeMap<_, _> = o.space.states().iter().cloned().zip(o.probabilities.iter().copied()).collect();
        let b = simulate(&i, 20_000, 9).unwrap();
        let r = compare(&b, &reference).unwrap();
        assert!(r.passed(), "max |z| = {}", r.max_abs_z);
    }

    #[test]
    fn self_reference_has_zero_scores() {
        let i = inst(&[0, 2], &[1, 2], 0.4, 1.0);
        let b = simulate(&i, 5_000, 3).unwrap();
        let r = compare(&b, &b.frequencies()).unwrap();
        assert!(r.cells.iter().all(|c| c.z.abs() < 1e-9));
    }

    #[test]
    fn perturbed_reference_is_flagged() {
        let i = inst(&[0, 2], &[1, 2], 0.4, 1.0);
        let o = oracle_distribution(&i, (-12, 14)).unwrap();
        let mut reference: BTreeMap<_, _> = o.space.states().iter().cloned().zip(o.probabilities.iter().copied()).collect();
        let b = simulate(&i, 100_000, 11).unwrap();
        assert!(compare(&b, &reference).unwrap().passed());
        let top = reference.iter().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).map(|(c, _)| c.clone()).unwrap();
        *reference.get_mut(&top).unwrap() *= 1.1;
        let r = compare(&b, &reference).unwrap();
        assert_eq!(r.flagged, vec![top]);
    }

    #[test]
    fn batch_serializes_to_json() {
        let b = simulate(&inst(&[0, 1], &[2, 1], 0.5, 0.2), 10, 1).unwrap();
        let v = serde_json::to_value(&b).unwrap();
        assert_eq!(v["counts"].as_array().unwrap().len(), b.counts.len());
    }

    #[test]
    fn missing_reference_cell() {
        let i = inst(&[0], &[1], 0.5, 1.0);
        let b = simulate(&i, 100, 1).unwrap();
        assert!(matches!(compare(&b, &BTreeMap::new()), Err(AsepError::MissingReference(_))));
    }
}
