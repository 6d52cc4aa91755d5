//! Transition probabilities as sums over `σ ∈ 𝕊_N` of contour integrals
//!
//! `P_{(Y,ν)}(X, π; t) = Σ_σ (2πi)^{-N} ∮ A_σ^π(ξ) ∏ ξ_{σ(i)}^{x_i} ∏ ξ_i^{-y_i-1} e^{ε(ξ_i) t} dξ`
//!
//! with `A_σ^π = h_σ^π A_σ` (`h ≡ 1` for a single species).
//!
//! On the node grid the integral for one `(σ, π)` is a single coefficient of
//! an inverse DFT. Relabelling the axes of each `σ`-grid so that axis `i`
//! carries `ξ_{σ(i)}` makes the coefficient index `(x_1, …, x_N)` for every
//! `σ`, so the `σ`-sum is taken on the grid and one transform per `π` yields
//! every target at once. The `A_σ` and `h_σ^π` values at a node tuple are
//! built once and shared by all `σ`, `π` and targets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bethe::{amplitude, eps, scattering, PairFactors, RateParams};
use crate::error::{AsepError, Result};
use crate::oracle::{exit_rate, leakage_bound, predecessors, StateSpace};
use crate::permutations::{classify_by_b, Permutation};
use crate::quadrature::{
    choose_radius, integrate_tensor, inverse_dft_nd, subsample_half, ContourSpec, DEFAULT_NODES, DEFAULT_SAFETY, MAX_GRID,
    MAX_NODES,
};
use crate::species::{HPlan, SpeciesMap};

/// Occupied sites `x_1 < ⋯ < x_N` with the species map `π`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    sites: Vec<i64>,
    species: SpeciesMap,
}

impl Configuration {
    pub fn new(sites: Vec<i64>, species: SpeciesMap) -> Result<Self> {
        if sites.is_empty() {
            return Err(AsepError::InvalidConfiguration("no particles".into()));
        }
        if sites.len() != species.len() {
            return Err(AsepError::SizeMismatch { expected: sites.len(), got: species.len() });
        }
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AsepError::InvalidConfiguration(format!("sites {sites:?} are not strictly increasing")));
        }
        Ok(Self { sites, species })
    }

    /// All particles of species 1.
    pub fn single(sites: Vec<i64>) -> Result<Self> {
        let n = sites.len();
        Self::new(sites, SpeciesMap::uniform(n))
    }

    pub(crate) fn from_parts(sites: Vec<i64>, labels: Vec<u32>) -> Self {
        Self { sites, species: SpeciesMap::try_from(labels).expect("labels are positive") }
    }

    pub fn sites(&self) -> &[i64] {
        &self.sites
    }

    pub fn species(&self) -> &SpeciesMap {
        &self.species
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Image under `x ↦ −x` with slots reversed.
    pub fn reflected(&self) -> Self {
        let sites = self.sites.iter().rev().map(|x| -x).collect();
        let labels = self.species.labels().iter().rev().copied().collect();
        Self::from_parts(sites, labels)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sites: Vec<String> = self.sites.iter().map(i64::to_string).collect();
        let labels: Vec<String> = self.species.labels().iter().map(u32::to_string).collect();
        write!(f, "{{{}}}[{}]", sites.join(","), labels.join(" "))
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Initial configuration `(Y, ν)`, rates and time.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    initial: Configuration,
    rates: RateParams<f64>,
    time: f64,
}

impl ProblemInstance {
    pub fn new(initial: Configuration, rates: RateParams<f64>, time: f64) -> Result<Self> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(AsepError::Precondition(format!("time {time} must be finite and nonnegative")));
        }
        Ok(Self { initial, rates, time })
    }

    pub fn initial(&self) -> &Configuration {
        &self.initial
    }

    pub fn rates(&self) -> &RateParams<f64> {
        &self.rates
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn n(&self) -> usize {
        self.initial.len()
    }

    pub fn at_time(&self, time: f64) -> Result<Self> {
        Self::new(self.initial.clone(), self.rates.clone(), time)
    }

    /// The mirror-image process: sites reflected, `p` and `q` exchanged.
    /// Transition probabilities satisfy
    /// `P_{(Y,ν)}(X, π) = P^{refl}_{(Y,ν)^refl}((X, π)^refl)`.
    pub fn reflected(&self) -> Result<Self> {
        let rates = RateParams::from_p(*self.rates.q())?;
        Ok(Self { initial: self.initial.reflected(), rates, time: self.time })
    }

    /// The same sites with every particle of species 1.
    pub fn single_species(&self) -> Self {
        let initial = Configuration::single(self.initial.sites.clone()).expect("sites already validated");
        Self { initial, rates: self.rates.clone(), time: self.time }
    }
}

/// Quadrature settings. `nodes: None` starts at [`DEFAULT_NODES`] and doubles
/// until the error estimate is below `tol`; a fixed node count disables the
/// doubling. `radius: None` picks `safety · r*` (or 1 for one particle, whose
/// integrand has no poles off the origin).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadOptions {
    pub radius: Option<f64>,
    pub nodes: Option<usize>,
    pub tol: f64,
    pub max_nodes: usize,
    pub safety: f64,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { radius: None, nodes: None, tol: 1e-10, max_nodes: MAX_NODES, safety: DEFAULT_SAFETY }
    }
}

impl QuadOptions {
    pub fn fixed(radius: f64, nodes: usize) -> Self {
        Self { radius: Some(radius), nodes: Some(nodes), ..Self::default() }
    }

    pub fn radius_for(&self, rates: &RateParams<f64>, n: usize) -> Result<f64> {
        match self.radius {
            Some(r) => Ok(r),
            None if n == 1 => Ok(1.0),
            None => choose_radius(rates, self.safety),
        }
    }
}

/// How a group of targets was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PassKind {
    /// The formula for `(Y, ν)` at the requested radius.
    Direct,
    /// Targets with `Σx < Σy`, through the reflected instance
    /// `x ↦ −x`, slots reversed, `p ↔ q`, where they have `Σx > Σy`.
    Reflected,
    /// Targets with `Σx < Σy` when `q = 0`, at a radius closer to the bound.
    Widened,
}

/// One set of grids.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Pass {
    pub kind: PassKind,
    pub contour: ContourSpec,
    /// Largest `|P_K − P_{K/2}|` over the targets of this pass.
    pub estimate: f64,
    pub converged: bool,
}

/// Formula values for a batch of targets.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub targets: Vec<Configuration>,
    pub values: Vec<f64>,
    /// Imaginary parts of the quadrature values; zero in exact arithmetic.
    pub imag: Vec<f64>,
    /// Targets whose species multiset differs from `ν`; their value is an
    /// exact zero.
    pub outside_orbit: Vec<bool>,
    /// `|P_K − P_{K/2}|` per target.
    pub estimates: Vec<f64>,
    /// Floating-point error scale per target: machine epsilon times the
    /// transform depth times the mean modulus of the integrand on the torus.
    pub rounding: Vec<f64>,
    /// Index into `passes` per target.
    pub pass_of: Vec<usize>,
    pub passes: Vec<Pass>,
    /// Largest discretization estimate over all targets.
    pub estimate: f64,
    pub converged: bool,
}

/// Relative size of an imaginary part that is reported rather than ignored.
pub const IMAG_REPORT: f64 = 1e-9;

impl Evaluation {
    /// Whether the imaginary part of target `i` exceeds `1e-9` of the real
    /// part beyond the error estimates.
    pub fn imag_flagged(&self, i: usize) -> bool {
        let floor = self.estimates[i].max(self.rounding[i]).max(1e-14);
        self.imag[i].abs() > IMAG_REPORT * self.values[i].abs() + floor
    }

    pub fn any_imag_flagged(&self) -> bool {
        (0..self.values.len()).any(|i| self.imag_flagged(i))
    }

    pub fn get(&self, c: &Configuration) -> Option<f64> {
        self.targets.iter().position(|t| t == c).map(|i| self.values[i])
    }

    /// Contour of the direct pass (or of the only pass).
    pub fn contour(&self) -> ContourSpec {
        self.passes[0].contour
    }

    pub fn max_rounding(&self) -> f64 {
        self.rounding.iter().copied().fold(0.0, f64::max)
    }
}

/// One formula value.
#[derive(Debug, Clone, Serialize)]
pub struct Probability {
    pub value: f64,
    pub imag: f64,
    pub imag_flagged: bool,
    pub outside_orbit: bool,
    pub estimate: f64,
    pub rounding: f64,
    pub pass: Pass,
    pub converged: bool,
}

impl Probability {
    fn from_evaluation(e: &Evaluation) -> Self {
        Self {
            value: e.values[0],
            imag: e.imag[0],
            imag_flagged: e.imag_flagged(0),
            outside_orbit: e.outside_orbit[0],
            estimate: e.estimates[0],
            rounding: e.rounding[0],
            pass: e.passes[e.pass_of[0]],
            converged: e.converged,
        }
    }
}

/// Single-species probability of reaching sites `x` (species are ignored).
pub fn prob_single(inst: &ProblemInstance, x: &[i64], opts: &QuadOptions) -> Result<Probability> {
    let single = inst.single_species();
    let target = Configuration::single(x.to_vec())?;
    Ok(Probability::from_evaluation(&evaluate(&single, &[target], opts)?))
}

/// Multispecies probability of reaching `target`.
pub fn prob_multi(inst: &ProblemInstance, target: &Configuration, opts: &QuadOptions) -> Result<Probability> {
    Ok(Probability::from_evaluation(&evaluate(inst, std::slice::from_ref(target), opts)?))
}

/// Formula values for all targets from one set of grids per pass.
///
/// On `|ξ| = r` the integrand carries `r^{Σx − Σy}`, so a target with
/// `Σx < Σy` loses about `(Σy − Σx)·log₁₀(1/r)` digits to rounding. Without
/// an explicit radius such targets are evaluated from the reflected instance
/// (or, when `q = 0`, at the wider radius `(1 + safety)/2 · r*`).
pub fn evaluate(inst: &ProblemInstance, targets: &[Configuration], opts: &QuadOptions) -> Result<Evaluation> {
    evaluate_at(inst, inst.time, targets, opts)
}

/// As [`evaluate`] at an arbitrary real time; the formula is entire in `t`.
fn evaluate_at(inst: &ProblemInstance, t: f64, targets: &[Configuration], opts: &QuadOptions) -> Result<Evaluation> {
    let n = inst.n();
    for c in targets {
        if c.len() != n {
            return Err(AsepError::SizeMismatch { expected: n, got: c.len() });
        }
    }
    let ysum: i64 = inst.initial.sites.iter().sum();
    let left: Vec<bool> = targets.iter().map(|c| c.sites.iter().sum::<i64>() < ysum).collect();
    let split = n > 1 && opts.radius.is_none() && left.iter().any(|&l| l);
    let mut groups: Vec<(PassKind, Vec<usize>)> = Vec::new();
    if split {
        let direct: Vec<usize> = (0..targets.len()).filter(|&i| !left[i]).collect();
        let shifted: Vec<usize> = (0..targets.len()).filter(|&i| left[i]).collect();
        if !direct.is_empty() {
            groups.push((PassKind::Direct, direct));
        }
        let kind = if *inst.rates.q() > 0.0 { PassKind::Reflected } else { PassKind::Widened };
        groups.push((kind, shifted));
    } else {
        groups.push((PassKind::Direct, (0..targets.len()).collect()));
    }

    let zero = Complex64::new(0.0, 0.0);
    let m = targets.len();
    let (mut full, mut estimates, mut rounding, mut pass_of) = (vec![zero; m], vec![0.0; m], vec![0.0; m], vec![0; m]);
    let mut passes = Vec::with_capacity(groups.len());
    for (kind, idx) in groups {
        let (pass_inst, pass_targets, radius): (ProblemInstance, Vec<Configuration>, f64) = match kind {
            PassKind::Direct => (inst.clone(), idx.iter().map(|&i| targets[i].clone()).collect(), opts.radius_for(&inst.rates, n)?),
            PassKind::Reflected => {
                let r = inst.reflected()?;
                let radius = opts.radius_for(&r.rates, n)?;
                (r, idx.iter().map(|&i| targets[i].reflected()).collect(), radius)
            }
            PassKind::Widened => {
                let radius = 0.5 * (1.0 + opts.safety) * crate::quadrature::radius_bound(&inst.rates);
                (inst.clone(), idx.iter().map(|&i| targets[i].clone()).collect(), radius)
            }
        };
        let out = adaptive(&pass_inst, t, &pass_targets, opts, radius)?;
        for (j, &i) in idx.iter().enumerate() {
            full[i] = out.full[j];
            estimates[i] = out.estimates[j];
            rounding[i] = out.rounding[j];
            pass_of[i] = passes.len();
        }
        passes.push(Pass { kind, contour: out.spec, estimate: out.estimate, converged: out.estimate <= opts.tol });
    }
    let outside_orbit: Vec<bool> = targets.iter().map(|c| !c.species.same_multiset(&inst.initial.species)).collect();
    Ok(Evaluation {
        targets: targets.to_vec(),
        values: full.iter().map(|z| z.re).collect(),
        imag: full.iter().map(|z| z.im).collect(),
        outside_orbit,
        estimate: estimates.iter().copied().fold(0.0, f64::max),
        estimates,
        rounding,
        pass_of,
        converged: passes.iter().all(|p| p.converged),
        passes,
    })
}

struct PassOutput {
    full: Vec<Complex64>,
    estimates: Vec<f64>,
    rounding: Vec<f64>,
    spec: ContourSpec,
    estimate: f64,
}

fn adaptive(inst: &ProblemInstance, t: f64, targets: &[Configuration], opts: &QuadOptions, radius: f64) -> Result<PassOutput> {
    let n = inst.n();
    let mut nodes = opts.nodes.unwrap_or(DEFAULT_NODES);
    loop {
        let spec = ContourSpec::new(radius, nodes, n)?;
        spec.check_admissible(&inst.rates)?;
        if spec.grid_size().is_none_or(|g| g > MAX_GRID) {
            return Err(AsepError::Infeasible(format!("{nodes}^{n} node grid exceeds {MAX_GRID}")));
        }
        let g = grid_values(inst, t, targets, &spec)?;
        let estimates: Vec<f64> = g.full.iter().zip(&g.half).map(|(a, b)| (a - b).norm()).collect();
        let estimate = estimates.iter().copied().fold(0.0, f64::max);
        if estimate <= opts.tol || opts.nodes.is_some() {
            return Ok(PassOutput { full: g.full, estimates, rounding: g.rounding, spec, estimate });
        }
        let next = nodes * 2;
        let grid = next.checked_pow(n as u32);
        if next > opts.max_nodes || grid.is_none_or(|g| g > MAX_GRID) {
            return Err(AsepError::NonConvergence { nodes, estimate });
        }
        nodes = next;
    }
}

const BLOCK: usize = 4096;

struct Scratch {
    digits: Vec<usize>,
    amp: Vec<Complex64>,
    pairs: PairFactors<Complex64>,
    h: Vec<Complex64>,
}

struct GridValues {
    full: Vec<Complex64>,
    half: Vec<Complex64>,
    rounding: Vec<f64>,
}

/// Values at `K` nodes and at the `K/2`-node subgrid, per target.
fn grid_values(inst: &ProblemInstance, t: f64, targets: &[Configuration], spec: &ContourSpec) -> Result<GridValues> {
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let n = inst.n();
    let k = spec.nodes();
    let r = spec.radius();
    let total = spec.grid_size().expect("checked by the caller");
    let nu = &inst.initial.species;
    let plan = HPlan::new(nu)?;
    let orbit = plan.orbit().clone();
    let m = orbit.len();
    let rc: RateParams<Complex64> = inst.rates.cast();
    let xs = spec.node_values();

    // S(ξ_a, ξ_b) by node index
    let mut s_tab = vec![zero; if n > 1 { k * k } else { 0 }];
    if n > 1 {
        for a in 0..k {
            for b in 0..k {
                s_tab[a * k + b] = scattering(&xs[a], &xs[b], &rc)?;
            }
        }
    }
    // ξ^{-y_j} e^{ε(ξ) t} by variable and node index
    let y = inst.initial.sites();
    let mut w = vec![zero; n * k];
    for j in 0..n {
        let scale = r.powf(-(y[j] as f64));
        for node in 0..k {
            let phase = (y[j].rem_euclid(k as i64) as usize * node) % k;
            let mono = Complex64::from_polar(scale, -2.0 * std::f64::consts::PI * phase as f64 / k as f64);
            w[j * k + node] = mono * (eps(&xs[node], &rc)? * t).exp();
        }
    }

    let perms: Vec<Permutation> = Permutation::all(n).collect();
    let nf = perms.len();
    let pow: Vec<usize> = (0..n).map(|i| k.pow((n - 1 - i) as u32)).collect();
    let mut strides = vec![0usize; nf * n];
    for (rank, sigma) in perms.iter().enumerate() {
        let inv = sigma.inverse();
        for j in 0..n {
            strides[rank * n + j] = pow[inv.at(j + 1) - 1];
        }
    }
    let steps = plan.steps();
    let per_node = nf * m;
    let mut acc = vec![vec![zero; total]; m];
    let mut buf = vec![zero; BLOCK.min(total) * per_node];
    let decode = |idx: usize, digits: &mut [usize]| {
        let mut rest = idx;
        for d in (0..n).rev() {
            digits[d] = rest % k;
            rest /= k;
        }
    };

    for start in (0..total).step_by(BLOCK) {
        let len = BLOCK.min(total - start);
        buf[..len * per_node].par_chunks_mut(per_node).enumerate().for_each_init(
            || Scratch {
                digits: vec![0; n],
                amp: vec![zero; nf],
                pairs: PairFactors::from_fn(n, |_, _| zero),
                h: Vec::new(),
            },
            |scr, (off, out)| {
                decode(start + off, &mut scr.digits);
                let d = &scr.digits;
                let mut wprod = one;
                for j in 0..n {
                    wprod *= w[j * k + d[j]];
                }
                scr.amp[0] = one;
                for st in steps {
                    scr.amp[st.target] = scr.amp[st.parent] * s_tab[d[st.b - 1] * k + d[st.a - 1]];
                }
                if m == 1 {
                    for (o, a) in out.iter_mut().zip(&scr.amp) {
                        *o = a * wprod;
                    }
                } else {
                    scr.pairs.refill(|a, b| if a < b { one + s_tab[d[a] * k + d[b]] } else { zero });
                    plan.evaluate_into(&scr.pairs, &rc, &mut scr.h);
                    for rank in 0..nf {
                        let base = scr.amp[rank] * wprod;
                        for pi in 0..m {
                            out[rank * m + pi] = scr.h[rank * m + pi] * base;
                        }
                    }
                }
            },
        );
        let mut digits = vec![0usize; n];
        for off in 0..len {
            decode(start + off, &mut digits);
            let vals = &buf[off * per_node..(off + 1) * per_node];
            for rank in 0..nf {
                let dst: usize = (0..n).map(|j| digits[j] * strides[rank * n + j]).sum();
                for pi in 0..m {
                    acc[pi][dst] += vals[rank * m + pi];
                }
            }
        }
    }

    let mut full = vec![zero; targets.len()];
    let mut half = vec![zero; targets.len()];
    let mut rounding = vec![0.0; targets.len()];
    let depth = f64::EPSILON * (n as f64 * (k as f64).log2() + 1.0);
    let kh = k / 2;
    for (pi, mut grid) in acc.into_iter().enumerate() {
        let wanted: Vec<usize> = (0..targets.len()).filter(|&i| orbit.index_of(&targets[i].species) == Some(pi)).collect();
        if wanted.is_empty() {
            continue;
        }
        if grid.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(AsepError::NonFinite);
        }
        let mean_abs = grid.iter().map(|z| z.norm()).sum::<f64>() / total as f64;
        let mut sub = subsample_half(&grid, k, n);
        inverse_dft_nd(&mut grid, k, n);
        inverse_dft_nd(&mut sub, kh, n);
        for i in wanted {
            let x = targets[i].sites();
            let scale = r.powf(x.iter().sum::<i64>() as f64);
            let at = |size: usize| -> usize { x.iter().fold(0, |acc, &xi| acc * size + xi.rem_euclid(size as i64) as usize) };
            full[i] = grid[at(k)] * (scale / total as f64);
            half[i] = sub[at(kh)] * (scale / kh.pow(n as u32) as f64);
            rounding[i] = depth * scale * mean_abs;
        }
    }
    Ok(GridValues { full, half, rounding })
}

/// Formula distribution over every configuration inside a window.
#[derive(Debug, Clone, Serialize)]
pub struct WindowDistribution {
    pub window: (i64, i64),
    pub evaluation: Evaluation,
    pub total_mass: f64,
    pub leakage_bound: f64,
}

impl WindowDistribution {
    pub fn entries(&self) -> impl Iterator<Item = (&Configuration, f64)> {
        self.evaluation.targets.iter().zip(self.evaluation.values.iter().copied())
    }

    pub fn as_map(&self) -> BTreeMap<Configuration, f64> {
        self.entries().map(|(c, v)| (c.clone(), v)).collect()
    }

    /// Distribution of the site of the leftmost particle carrying `label`.
    pub fn position_marginal(&self, label: u32) -> BTreeMap<i64, f64> {
        let mut out = BTreeMap::new();
        for (c, v) in self.entries() {
            if let Some(slot) = c.species.position_of(label) {
                *out.entry(c.sites[slot - 1]).or_insert(0.0) += v;
            }
        }
        out
    }
}

pub fn distribution_over_window(inst: &ProblemInstance, window: (i64, i64), opts: &QuadOptions) -> Result<WindowDistribution> {
    let y = inst.initial.sites();
    if window.0 > y[0] || window.1 < y[y.len() - 1] {
        return Err(AsepError::Precondition(format!("window [{}, {}] does not contain the initial sites", window.0, window.1)));
    }
    let space = StateSpace::new(&inst.initial, window)?;
    let evaluation = evaluate(inst, space.states(), opts)?;
    let total_mass = evaluation.values.iter().sum();
    Ok(WindowDistribution {
        window,
        leakage_bound: leakage_bound(&inst.initial, inst.time, window),
        evaluation,
        total_mass,
    })
}

/// `I(σ)` for every `σ` in the class of `B`, at `t = 0`, by direct summation.
#[derive(Debug, Clone, Serialize)]
pub struct BClassResidual {
    pub b: BTreeSet<usize>,
    pub integrals: Vec<(Permutation, [f64; 2])>,
    /// `|Σ_{σ ∈ class(B)} I(σ)|`.
    pub class_sum: f64,
    pub max_individual: f64,
}

pub fn verify_b_vanishing(
    b: &BTreeSet<usize>,
    y: &[i64],
    x: &[i64],
    rates: &RateParams<f64>,
    spec: &ContourSpec,
) -> Result<BClassResidual> {
    let n = y.len();
    if x.len() != n || spec.dimension() != n {
        return Err(AsepError::SizeMismatch { expected: n, got: x.len() });
    }
    if b.is_empty() || b.iter().any(|&i| i == 0 || i >= n) {
        return Err(AsepError::Precondition(format!("B = {b:?} must be a nonempty subset of 1..{n}")));
    }
    spec.check_admissible(rates)?;
    let classes = classify_by_b(n)?;
    let class = classes
        .get(b)
        .ok_or_else(|| AsepError::Precondition(format!("no permutation of size {n} has B = {b:?}")))?;
    let rc: RateParams<Complex64> = rates.cast();
    let mut integrals = Vec::with_capacity(class.len());
    let mut sum = Complex64::new(0.0, 0.0);
    for sigma in class {
        let v = integrate_tensor(
            |xi| {
                let Ok(a) = amplitude(sigma, xi, &rc) else {
                    return Complex64::new(f64::NAN, 0.0);
                };
                let mut val = a;
                for i in 0..n {
                    val *= xi[sigma.at(i + 1) - 1].powi(x[i] as i32) * xi[i].powi(-(y[i] as i32) - 1);
                }
                val
            },
            spec,
        )?;
        sum += v;
        integrals.push((sigma.clone(), [v.re, v.im]));
    }
    let max_individual = integrals.iter().map(|(_, v)| v[0].hypot(v[1])).fold(0.0, f64::max);
    Ok(BClassResidual { b: b.clone(), integrals, class_sum: sum.norm(), max_individual })
}

/// Central difference of the formula in `t` against the generator applied to
/// the formula values.
#[derive(Debug, Clone, Serialize)]
pub struct MasterResidual {
    pub derivative: f64,
    pub generator_action: f64,
    pub residual: f64,
    pub dt: f64,
    pub contour: ContourSpec,
}

pub fn master_equation_residual(
    inst: &ProblemInstance,
    target: &Configuration,
    opts: &QuadOptions,
    dt: f64,
) -> Result<MasterResidual> {
    if !(dt > 0.0 && inst.time > dt) {
        return Err(AsepError::Precondition(format!("need t > dt > 0, got t = {}, dt = {dt}", inst.time)));
    }
    let preds = predecessors(target, &inst.rates);
    let mut targets = vec![target.clone()];
    targets.extend(preds.iter().map(|(c, _)| c.clone()));
    let now = evaluate(inst, &targets, opts)?;
    let fixed = QuadOptions::fixed(now.contour().radius(), now.contour().nodes());
    let derivative = central_difference(inst, inst.time, target, &fixed, dt)?;
    let mut action = -exit_rate(target, &inst.rates) * now.values[0];
    for (i, (_, rate)) in preds.iter().enumerate() {
        action += rate * now.values[i + 1];
    }
    Ok(MasterResidual {
        derivative,
        generator_action: action,
        residual: (derivative - action).abs(),
        dt,
        contour: now.contour(),
    })
}

/// `d/dt P(Y, ν; t)` at `t = 0` by central difference, with the total exit
/// rate of `(Y, ν)` it should equal in magnitude.
pub fn initial_derivative(inst: &ProblemInstance, opts: &QuadOptions, dt: f64) -> Result<(f64, f64)> {
    let d = central_difference(inst, 0.0, &inst.initial, opts, dt)?;
    Ok((d, exit_rate(&inst.initial, &inst.rates)))
}

fn central_difference(inst: &ProblemInstance, t: f64, target: &Configuration, opts: &QuadOptions, dt: f64) -> Result<f64> {
    let plus = evaluate_at(inst, t + dt, std::slice::from_ref(target), opts)?;
    let minus = evaluate_at(inst, t - dt, std::slice::from_ref(target), opts)?;
    Ok((plus.values[0] - minus.values[0]) / (2.0 * dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::oracle_distribution;

    fn cfg(sites: &[i64], labels: &[u32]) -> Configuration {
        Configuration::new(sites.to_vec(), SpeciesMap::try_from(labels.to_vec()).unwrap()).unwrap()
    }

    fn inst(sites: &[i64], labels: &[u32], p: f64, t: f64) -> ProblemInstance {
        ProblemInstance::new(cfg(sites, labels), RateParams::from_p(p).unwrap(), t).unwrap()
    }

    #[test]
    fn configuration_validation() {
        assert!(Configuration::single(vec![0, 0]).is_err());
        assert!(Configuration::single(vec![2, 1]).is_err());
        assert!(Configuration::new(vec![0, 1], SpeciesMap::uniform(3)).is_err());
        assert_eq!(cfg(&[0, 2], &[2, 1]).to_string(), "{0,2}[2 1]");
        assert!(ProblemInstance::new(cfg(&[0], &[1]), RateParams::from_p(0.5).unwrap(), -1.0).is_err());
        assert!(RateParams::from_p(0.0).is_err());
    }

    #[test]
    fn delta_at_time_zero() {
        let i = inst(&[0, 2], &[1, 1], 0.6, 0.0);
        let targets: Vec<_> = [[0, 2], [0, 1], [1, 2], [-1, 3]].iter().map(|s| cfg(s, &[1, 1])).collect();
        let e = evaluate(&i, &targets, &QuadOptions::default()).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-10);
        for v in &e.values[1..] {
            assert!(v.abs() < 1e-10);
        }
        assert!(e.converged);
    }

    #[test]
    fn single_particle_series() {
        let i = inst(&[0], &[1], 0.6, 1.0);
        let fact = |n: i32| (1..=n).map(f64::from).product::<f64>();
        for x in 0..6 {
            let want: f64 = (0..40).map(|k| 0.6f64.powi(k + x) * 0.4f64.powi(k) / (fact(k) * fact(k + x))).sum::<f64>() * (-1f64).exp();
            let got = prob_single(&i, &[x as i64], &QuadOptions::default()).unwrap();
            assert!((got.value - want).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn orbit_mismatch_is_exact_zero() {
        let i = inst(&[0, 1], &[2, 1], 0.5, 0.3);
        let p = prob_multi(&i, &cfg(&[0, 1], &[2, 2]), &QuadOptions::default()).unwrap();
        assert!(p.outside_orbit);
        assert_eq!(p.value, 0.0);
    }

    #[test]
    fn one_species_paths_agree_bitwise() {
        let i = inst(&[0, 1, 3], &[1, 1, 1], 0.7, 0.4);
        let opts = QuadOptions::fixed(0.25, 16);
        let a = prob_single(&i, &[0, 2, 3], &opts).unwrap();
        let b = prob_multi(&i, &cfg(&[0, 2, 3], &[1, 1, 1]), &opts).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.imag.to_bits(), b.imag.to_bits());
    }

    #[test]
    fn grid_route_matches_direct_route() {
        // the relabelled-FFT extraction against plain summation of the integrand
        let i = inst(&[0, 2], &[2, 1], 0.7, 0.5);
        let spec = ContourSpec::new(0.3, 32, 2).unwrap();
        let rc: RateParams<Complex64> = i.rates.cast();
        let x = [1i64, 2];
        let target = cfg(&x, &[1, 2]);
        let fast = evaluate(&i, std::slice::from_ref(&target), &QuadOptions::fixed(0.3, 32)).unwrap();
        let direct = integrate_tensor(
            |xi| {
                let mut total = Complex64::new(0.0, 0.0);
                for sigma in Permutation::all(2) {
                    let a = crate::species::compute_a_pi(&sigma, target.species(), i.initial.species(), xi, &rc).unwrap();
                    let mut v = a;
                    for k in 0..2 {
                        v *= xi[sigma.at(k + 1) - 1].powi(x[k] as i32)
                            * xi[k].powi(-(i.initial.sites[k] as i32) - 1)
                            * (eps(&xi[k], &rc).unwrap() * 0.5).exp();
                    }
                    total += v;
                }
                total
            },
            &spec,
        )
        .unwrap();
        assert!((fast.values[0] - direct.re).abs() < 1e-13);
        assert!((fast.imag[0] - direct.im).abs() < 1e-13);
    }

    #[test]
    fn matches_oracle_two_species() {
        let i = inst(&[0, 1], &[2, 1], 0.7, 0.5);
        let window = crate::oracle::window_for(i.initial(), 0.5, 1e-10).unwrap();
        let o = oracle_distribution(&i, window).unwrap();
        let target = cfg(&[0, 1], &[1, 2]);
        let p = prob_multi(&i, &target, &QuadOptions::default()).unwrap();
        assert!((p.value - o.probability(&target).unwrap()).abs() < 1e-6);
        assert!(p.value > 0.0);
    }

    #[test]
    fn equal_species_exchange_symmetry() {
        // relabelling two equal-species particles leaves the law unchanged
        let i = inst(&[0, 1, 3], &[2, 1, 2], 0.7, 0.6);
        let targets = vec![cfg(&[0, 2, 3], &[2, 2, 1]), cfg(&[-1, 1, 3], &[1, 2, 2])];
        let e = evaluate(&i, &targets, &QuadOptions::default()).unwrap();
        let o = oracle_distribution(&i, (-12, 15)).unwrap();
        for (c, v) in targets.iter().zip(&e.values) {
            assert!((v - o.probability(c).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn window_distribution_mass() {
        let i = inst(&[0, 2], &[1, 2], 0.5, 0.5);
        let window = crate::oracle::window_for(i.initial(), 0.5, 1e-10).unwrap();
        let d = distribution_over_window(&i, window, &QuadOptions::default()).unwrap();
        assert!(d.total_mass >= 1.0 - d.leakage_bound - 1e-9);
        assert!(d.total_mass <= 1.0 + 1e-9);
        assert!(d.entries().all(|(_, v)| v > -1e-9 && v < 1.0 + 1e-9));
        let marginal: f64 = d.position_marginal(1).values().sum();
        assert!((marginal - d.total_mass).abs() < 1e-12);
        let t0 = distribution_over_window(&i.at_time(0.0).unwrap(), (-1, 3), &QuadOptions::default()).unwrap();
        for (c, v) in t0.entries() {
            let want = if c == i.initial() { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-10);
        }
    }

    #[test]
    fn lemma_class_vanishes() {
        let rates = RateParams::from_p(0.6).unwrap();
        let spec = ContourSpec::new(0.3, 64, 2).unwrap();
        let b: BTreeSet<usize> = [1].into_iter().collect();
        let r = verify_b_vanishing(&b, &[0, 3], &[1, 2], &rates, &spec).unwrap();
        assert!(r.max_individual < 1e-9);
        assert!(verify_b_vanishing(&BTreeSet::new(), &[0, 3], &[1, 2], &rates, &spec).is_err());
    }

    #[test]
    fn master_equation_single_particle() {
        let i = inst(&[0], &[1], 0.7, 1.0);
        let r = master_equation_residual(&i, &cfg(&[1], &[1]), &QuadOptions::default(), 1e-3).unwrap();
        assert!(r.residual < 1e-6, "{r:?}");
        assert!(master_equation_residual(&i, &cfg(&[1], &[1]), &QuadOptions::default(), 2.0).is_err());
    }

    #[test]
    fn initial_derivative_is_exit_rate() {
        let i = inst(&[0, 1], &[2, 1], 0.7, 0.0);
        let (d, exit) = initial_derivative(&i, &QuadOptions::default(), 1e-3).unwrap();
        assert!((d + exit).abs() < 1e-5);
        assert!((exit - 1.7).abs() < 1e-15);
    }
}
