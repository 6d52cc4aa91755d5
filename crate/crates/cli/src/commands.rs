//! Execution of each command against the core library.

use std::collections::BTreeMap;

use asep_core::bethe::{f_kernel, RateParams};
use asep_core::oracle::{leakage_bound, oracle_distribution};
use asep_core::permutations::{classify_by_b, Permutation};
use asep_core::quadrature::{choose_radius, ContourSpec, DEFAULT_NODES};
use asep_core::scalar::{parse_rational, Scalar};
use asep_core::simulate::{compare, simulate, MIN_EXPECTED, Z_LIMIT};
use asep_core::species::{compute_h, compute_h_table, h_second_class, verify_braid, SpeciesMap};
use asep_core::transition::{distribution_over_window, evaluate, verify_b_vanishing, Configuration, ProblemInstance};
use asep_core::AsepError;
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::manifest::{CommandKind, InstanceDefaults, ReferenceKind, RunManifest};
use crate::report::{
    join, pass_records, ComparisonRow, HistogramRow, Outcome, ProbabilityRow, QuadRecord, Report, Settings, Table, REPORT_FORMAT,
};
use crate::CliError;

const CONTOUR: &str = "contour_integral_over_permutations";
const AMPLITUDE: &str = "scattering_amplitude_product";
const H_RECURSION: &str = "species_coefficient_recursion";
const QUADRATURE: &str = "trapezoid_rule_on_torus";
const GENERATOR: &str = "generator_uniformization";

/// Rounding allowance on top of the truncation and quadrature bounds when
/// `prob` is checked against the oracle.
const ORACLE_SLACK: f64 = 1e-9;

pub fn execute(m: &RunManifest) -> Result<Outcome, CliError> {
    match m.command {
        CommandKind::Prob => prob(m),
        CommandKind::VerifyDelta => verify_delta(m),
        CommandKind::VerifyBraid => verify_braid_cmd(m),
        CommandKind::VerifyBClasses => verify_b_classes(m),
        CommandKind::VerifySecondClass => verify_second_class(m),
        CommandKind::Oracle => oracle(m),
        CommandKind::Simulate => simulate_cmd(m),
        CommandKind::Compare => compare_cmd(m),
    }
}

fn core(e: AsepError) -> CliError {
    CliError::Input(e.to_string())
}

fn report(m: &RunManifest, passed: bool, formulas: &[&str], settings: Settings) -> Report {
    Report {
        format: REPORT_FORMAT,
        command: m.command.name().to_string(),
        passed,
        formulas: formulas.iter().map(|s| s.to_string()).collect(),
        settings,
        metrics: BTreeMap::new(),
        counterexample: None,
    }
}

fn instance_settings(m: &RunManifest, inst: &ProblemInstance) -> Settings {
    Settings {
        p: m.instance.p.as_ref().map(|r| r.label()).or_else(|| Some(inst.rates().p().to_string())),
        t: Some(inst.time()),
        n: Some(inst.n()),
        initial_sites: Some(inst.initial().sites().to_vec()),
        initial_species: Some(inst.initial().species().labels().to_vec()),
        ..Settings::default()
    }
}

fn prob(m: &RunManifest) -> Result<Outcome, CliError> {
    let inst = m.instance.resolve(&InstanceDefaults { p: None, t: None, n: 1 })?;
    let opts = m.options.quad.options(1e-10);
    let (targets, window) = match &m.options.targets {
        Some(ts) => (ts.iter().map(|t| t.configuration(&inst)).collect::<Result<Vec<_>, _>>()?, None),
        None => {
            let w = m.options.window_or_auto(&inst)?;
            (asep_core::oracle::StateSpace::new(inst.initial(), w).map_err(core)?.states().to_vec(), Some(w))
        }
    };
    let e = evaluate(&inst, &targets, &opts).map_err(core)?;
    let mut rows: Vec<ProbabilityRow> = targets
        .iter()
        .enumerate()
        .map(|(i, c)| ProbabilityRow { imag: Some(e.imag[i]), estimate: Some(e.estimates[i]), ..ProbabilityRow::new(c, e.values[i]) })
        .collect();
    let mut settings = instance_settings(m, &inst);
    settings.quadrature = Some(QuadRecord::from(&opts));
    settings.passes = pass_records(&e);
    settings.window = window.map(|(a, b)| [a, b]);
    settings.targets = m.options.targets.clone();
    let mut formulas = vec![CONTOUR, AMPLITUDE, QUADRATURE];
    if inst.initial().species().species_count() > 1 {
        formulas.push(H_RECURSION);
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("targets".into(), targets.len() as f64);
    metrics.insert("total".into(), e.values.iter().sum());
    metrics.insert("max_estimate".into(), e.estimate);
    metrics.insert("max_rounding".into(), e.max_rounding());
    metrics.insert("imag_flagged".into(), (0..targets.len()).filter(|&i| e.imag_flagged(i)).count() as f64);
    let mut summary = vec![format!(
        "{} target(s) from {} at p = {}, t = {}; max estimate {:.2e}",
        targets.len(),
        inst.initial(),
        inst.rates().p(),
        inst.time(),
        e.estimate
    )];
    let mut counterexample = None;
    if m.options.oracle {
        let ow = match window {
            Some(w) => w,
            None => enclosing_window(&inst, &targets, m.options.window_or_auto(&inst)?),
        };
        let o = oracle_distribution(&inst, ow).map_err(core)?;
        let mut worst: f64 = 0.0;
        for (row, c) in rows.iter_mut().zip(&targets) {
            let v = o.probability(c).unwrap_or(0.0);
            row.oracle = Some(v);
            worst = worst.max((row.value - v).abs());
        }
        let bound = leakage_bound(inst.initial(), inst.time(), ow);
        let allowed = bound + e.estimate + ORACLE_SLACK;
        if worst > allowed {
            counterexample = Some(serde_json::json!({"max_oracle_diff": worst, "allowed": allowed}));
        }
        metrics.insert("max_oracle_diff".into(), worst);
        metrics.insert("oracle_leakage_bound".into(), bound);
        settings.oracle = Some(serde_json::to_value(&o.settings).expect("settings serialize"));
        settings.leak = Some(m.options.leak());
        formulas.push(GENERATOR);
        summary.push(format!("max |formula - oracle| = {worst:.2e} on window [{}, {}]", ow.0, ow.1));
    }
    if targets.len() <= 20 {
        summary.extend(rows.iter().map(|r| format!("  {{{}}}[{}]  {:.15e}", r.sites, r.species, r.value)));
    }
    let mut r = report(m, counterexample.is_none(), &formulas, settings);
    r.metrics = metrics;
    r.counterexample = counterexample;
    Ok(Outcome { report: r, table: Some(Table::Probabilities(rows)), artifacts: vec![], summary })
}

/// Smallest window containing `base` and every target.
fn enclosing_window(inst: &ProblemInstance, targets: &[Configuration], base: (i64, i64)) -> (i64, i64) {
    let mut w = base;
    for c in targets.iter().chain(std::iter::once(inst.initial())) {
        w.0 = w.0.min(c.sites()[0]);
        w.1 = w.1.max(c.sites()[c.len() - 1]);
    }
    w
}

fn verify_delta(m: &RunManifest) -> Result<Outcome, CliError> {
    if m.instance.t.is_some_and(|t| t != 0.0) {
        return Err(CliError::Input("t: delta recovery is checked at t = 0".into()));
    }
    let inst = m.instance.resolve(&InstanceDefaults { p: Some(0.5), t: Some(0.0), n: 3 })?;
    let tolerance = m.options.tolerance.unwrap_or(1e-8);
    let opts = m.options.quad.options(1e-10);
    let y = inst.initial().sites();
    let [lo, hi] = m.options.window.unwrap_or([y[0] - 3, y[y.len() - 1] + 3]);
    let d = distribution_over_window(&inst, (lo, hi), &opts).map_err(core)?;
    let mut worst: f64 = 0.0;
    let mut counterexample = None;
    let mut rows = Vec::new();
    for (i, (c, v)) in d.entries().enumerate() {
        let expected = if c == inst.initial() { 1.0 } else { 0.0 };
        let err = (v - expected).abs();
        worst = worst.max(err);
        if err > tolerance && counterexample.is_none() {
            counterexample = Some(json!({ "configuration": c, "value": v, "expected": expected }));
        }
        rows.push(ProbabilityRow {
            imag: Some(d.evaluation.imag[i]),
            estimate: Some(d.evaluation.estimates[i]),
            ..ProbabilityRow::new(c, v)
        });
    }
    let mut settings = instance_settings(m, &inst);
    settings.quadrature = Some(QuadRecord::from(&opts));
    settings.passes = pass_records(&d.evaluation);
    settings.window = Some([lo, hi]);
    settings.tolerance = Some(tolerance);
    let passed = counterexample.is_none();
    let mut r = report(m, passed, &[CONTOUR, AMPLITUDE, H_RECURSION, QUADRATURE], settings);
    r.metrics.insert("max_error".into(), worst);
    r.metrics.insert("targets".into(), rows.len() as f64);
    r.metrics.insert("max_estimate".into(), d.evaluation.estimate);
    r.counterexample = counterexample;
    let summary = vec![format!(
        "delta recovery for {} at p = {} over [{lo}, {hi}]: {} targets, max |P - delta| = {worst:.2e} (tol {tolerance:.0e})",
        inst.initial(),
        inst.rates().p(),
        rows.len()
    )];
    Ok(Outcome { report: r, table: Some(Table::Probabilities(rows)), artifacts: vec![], summary })
}

fn random_rational(rng: &mut ChaCha8Rng) -> BigRational {
    BigRational::new(rng.gen_range(-30i64..=30).into(), rng.gen_range(1i64..=23).into())
}

/// Random rational point where no `f(ξ_b, ξ_a)` vanishes.
fn generic_point(rng: &mut ChaCha8Rng, n: usize, rates: &RateParams<BigRational>) -> Vec<BigRational> {
    loop {
        let xi: Vec<BigRational> = (0..n).map(|_| random_rational(rng)).collect();
        if (0..n).all(|a| (0..n).all(|b| !f_kernel(&xi[b], &xi[a], rates).is_zero())) {
            return xi;
        }
    }
}

fn exact_rates(m: &RunManifest, default: &str) -> Result<(String, RateParams<BigRational>), CliError> {
    let rate = m.instance.p.clone().unwrap_or(crate::manifest::Rate::Text(default.into()));
    let p = rate.to_rational()?;
    let rates = RateParams::new(p).map_err(|e| CliError::Input(format!("p: {e}")))?;
    Ok((rate.label(), rates))
}

fn xi_json(xi: &[BigRational]) -> Value {
    xi.iter().map(Scalar::to_json).collect()
}

fn verify_braid_cmd(m: &RunManifest) -> Result<Outcome, CliError> {
    let n = m.instance.particle_count(3)?;
    if n < 2 {
        return Err(CliError::Input("N: braid relations need N >= 2".into()));
    }
    let (label, rates) = exact_rates(m, "1/2")?;
    let points = m.options.points.unwrap_or(20);
    let seed = m.options.seed.unwrap_or(0);
    let nus: Vec<SpeciesMap> = match &m.instance.nu {
        Some(_) => vec![m.instance.species(n)?],
        None => vec![],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0usize; 3];
    let mut counterexample = None;
    for _ in 0..points {
        let xi = generic_point(&mut rng, n, &rates);
        let rep = verify_braid(n, &xi, &rates, &nus).map_err(core)?;
        counts[0] += rep.involution_checks;
        counts[1] += rep.far_commutation_checks;
        counts[2] += rep.braid_checks;
        if let Some(c) = rep.counterexample {
            counterexample = Some(json!({ "xi": xi_json(&xi), "case": c }));
            break;
        }
    }
    let settings = Settings {
        p: Some(label.clone()),
        n: Some(n),
        initial_species: m.instance.nu.clone(),
        seed: Some(seed),
        points: Some(points),
        tolerance: Some(0.0),
        ..Settings::default()
    };
    let passed = counterexample.is_none();
    let mut r = report(m, passed, &[H_RECURSION, "braid_relations_exact"], settings);
    r.metrics.insert("involution_checks".into(), counts[0] as f64);
    r.metrics.insert("far_commutation_checks".into(), counts[1] as f64);
    r.metrics.insert("braid_checks".into(), counts[2] as f64);
    r.counterexample = counterexample;
    let summary = vec![format!(
        "braid relations for N = {n}, p = {label}: {} involution, {} commutation, {} braid checks at {points} rational points: {}",
        counts[0],
        counts[1],
        counts[2],
        if passed { "all exact" } else { "counterexample found" }
    )];
    Ok(Outcome { report: r, table: None, artifacts: vec![], summary })
}

fn verify_b_classes(m: &RunManifest) -> Result<Outcome, CliError> {
    let n = m.instance.particle_count(3)?;
    if n < 2 {
        return Err(CliError::Input("N: class sums need N >= 2".into()));
    }
    let p = m.instance.rate(Some(0.5))?.to_f64()?;
    let rates = RateParams::from_p(p).map_err(|e| CliError::Input(format!("p: {e}")))?;
    let y = m.instance.y.clone().unwrap_or_else(|| (0..n as i64).map(|i| 2 * i).collect());
    let x = m.options.x.clone().unwrap_or_else(|| y.iter().map(|v| v + 1).collect());
    for (name, v) in [("Y", &y), ("X", &x)] {
        if v.len() != n || v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Input(format!("{name}: need {n} strictly increasing sites")));
        }
    }
    let tolerance = m.options.tolerance.unwrap_or(1e-9);
    let opts = m.options.quad.options(1e-10);
    let radius = match opts.radius {
        Some(r) => r,
        None => choose_radius(&rates, opts.safety).map_err(core)?,
    };
    let spec = ContourSpec::new(radius, opts.nodes.unwrap_or(DEFAULT_NODES), n).map_err(core)?;
    let mut worst_sum: f64 = 0.0;
    let mut worst_single: f64 = 0.0;
    let mut counterexample = None;
    let mut classes = 0;
    for b in classify_by_b(n).map_err(core)?.keys().filter(|b| !b.is_empty()) {
        let res = verify_b_vanishing(b, &y, &x, &rates, &spec).map_err(core)?;
        classes += 1;
        worst_sum = worst_sum.max(res.class_sum);
        if b.len() == 1 {
            worst_single = worst_single.max(res.max_individual);
        }
        let bad = res.class_sum > tolerance || (b.len() == 1 && res.max_individual > tolerance);
        if bad && counterexample.is_none() {
            counterexample = Some(serde_json::to_value(&res).expect("residual serializes"));
        }
    }
    let settings = Settings {
        p: Some(m.instance.p.as_ref().map(|r| r.label()).unwrap_or_else(|| p.to_string())),
        t: Some(0.0),
        n: Some(n),
        initial_sites: Some(y.clone()),
        targets: Some(vec![crate::manifest::TargetSpec { x: x.clone(), pi: None }]),
        quadrature: Some(QuadRecord { radius: Some(radius), nodes: Some(spec.nodes()), ..QuadRecord::from(&opts) }),
        tolerance: Some(tolerance),
        ..Settings::default()
    };
    let passed = counterexample.is_none();
    let mut r = report(m, passed, &[CONTOUR, AMPLITUDE, "direct_tensor_quadrature"], settings);
    r.metrics.insert("classes".into(), classes as f64);
    r.metrics.insert("max_class_sum".into(), worst_sum);
    r.metrics.insert("max_single_integral".into(), worst_single);
    r.counterexample = counterexample;
    let summary = vec![format!(
        "{classes} classes for Y = {y:?}, X = {x:?}: max class sum {worst_sum:.2e}, max |I| with |B| = 1 {worst_single:.2e} (tol {tolerance:.0e})"
    )];
    Ok(Outcome { report: r, table: None, artifacts: vec![], summary })
}

fn second_class_map(n: usize, pos: usize) -> SpeciesMap {
    let mut labels = vec![2; n];
    labels[pos - 1] = 1;
    SpeciesMap::try_from(labels).expect("labels are positive")
}

fn verify_second_class(m: &RunManifest) -> Result<Outcome, CliError> {
    let n = m.instance.particle_count(4)?;
    let (label, rates) = exact_rates(m, "1/3")?;
    let points = m.options.points.unwrap_or(5);
    let seed = m.options.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut skipped) = (0usize, 0usize);
    let mut counterexample = None;
    'points: for _ in 0..points {
        let xi = generic_point(&mut rng, n, &rates);
        for nu_pos in 1..=n.min(2) {
            let nu = second_class_map(n, nu_pos);
            for sigma in Permutation::all(n) {
                let h = compute_h(&sigma, &nu, &xi, &rates).map_err(core)?;
                for j in 1..=n {
                    match h_second_class(&sigma, nu_pos, j, &xi, &rates) {
                        Ok(v) => {
                            let want = h.get(&second_class_map(n, j));
                            if v != want {
                                counterexample = Some(json!({
                                    "xi": xi_json(&xi), "nu_pos": nu_pos, "sigma": sigma, "j": j,
                                    "closed_form": v.to_json(), "recursion": want.to_json(),
                                }));
                                break 'points;
                            }
                            checked += 1;
                        }
                        Err(AsepError::Precondition(_)) => skipped += 1,
                        Err(e) => return Err(core(e)),
                    }
                }
            }
        }
    }
    let settings = Settings {
        p: Some(label.clone()),
        n: Some(n),
        seed: Some(seed),
        points: Some(points),
        tolerance: Some(0.0),
        ..Settings::default()
    };
    let passed = counterexample.is_none();
    let mut r = report(m, passed, &[H_RECURSION, "second_class_closed_form"], settings);
    r.metrics.insert("checked".into(), checked as f64);
    r.metrics.insert("outside_closed_form_region".into(), skipped as f64);
    r.counterexample = counterexample;
    let summary = vec![format!(
        "second-class closed forms for N = {n}, p = {label}: {checked} exact matches, {skipped} cases outside the closed form's region"
    )];
    Ok(Outcome { report: r, table: None, artifacts: vec![], summary })
}

fn oracle(m: &RunManifest) -> Result<Outcome, CliError> {
    let inst = m.instance.resolve(&InstanceDefaults { p: None, t: None, n: 1 })?;
    let window = m.options.window_or_auto(&inst)?;
    let o = oracle_distribution(&inst, window).map_err(core)?;
    let rows: Vec<ProbabilityRow> = o.space.states().iter().zip(&o.probabilities).map(|(c, &v)| ProbabilityRow::new(c, v)).collect();
    let mut settings = instance_settings(m, &inst);
    settings.window = Some([window.0, window.1]);
    settings.oracle = Some(serde_json::to_value(&o.settings).expect("settings serialize"));
    settings.leak = Some(m.options.leak());
    let mut r = report(m, true, &[GENERATOR], settings);
    let leak = leakage_bound(inst.initial(), inst.time(), window);
    r.metrics.insert("states".into(), rows.len() as f64);
    r.metrics.insert("total_mass".into(), o.total_mass());
    r.metrics.insert("leakage_bound".into(), leak);
    let summary = vec![format!(
        "generator oracle for {} at p = {}, t = {} on [{}, {}]: {} states, mass {:.15}, leakage bound {leak:.2e}",
        inst.initial(),
        inst.rates().p(),
        inst.time(),
        window.0,
        window.1,
        rows.len(),
        o.total_mass()
    )];
    Ok(Outcome { report: r, table: Some(Table::Probabilities(rows)), artifacts: vec![], summary })
}

fn sampling(m: &RunManifest) -> (u64, u64) {
    (m.options.trials.unwrap_or(10_000), m.options.seed.unwrap_or(0))
}

fn simulate_cmd(m: &RunManifest) -> Result<Outcome, CliError> {
    let inst = m.instance.resolve(&InstanceDefaults { p: None, t: None, n: 1 })?;
    let (trials, seed) = sampling(m);
    let batch = simulate(&inst, trials, seed).map_err(core)?;
    let rows: Vec<HistogramRow> = batch
        .counts
        .iter()
        .map(|(c, &k)| HistogramRow {
            sites: join(c.sites()),
            species: join(c.species().labels()),
            count: k,
            frequency: k as f64 / trials as f64,
        })
        .collect();
    let mut settings = instance_settings(m, &inst);
    settings.seed = Some(seed);
    settings.trials = Some(trials);
    let mut r = report(m, true, &["attempt_rejection_dynamics"], settings);
    r.metrics.insert("cells".into(), rows.len() as f64);
    let summary = vec![format!(
        "{trials} trajectories from {} at p = {}, t = {} (seed {seed}): {} distinct end states",
        inst.initial(),
        inst.rates().p(),
        inst.time(),
        rows.len()
    )];
    Ok(Outcome { report: r, table: Some(Table::Histogram(rows)), artifacts: vec![], summary })
}

fn compare_cmd(m: &RunManifest) -> Result<Outcome, CliError> {
    let inst = m.instance.resolve(&InstanceDefaults { p: None, t: None, n: 1 })?;
    let (trials, seed) = sampling(m);
    let window = m.options.window_or_auto(&inst)?;
    let kind = m.options.reference.unwrap_or_default();
    let opts = m.options.quad.options(1e-10);
    let mut settings = instance_settings(m, &inst);
    let (reference, mut formulas): (BTreeMap<Configuration, f64>, Vec<&str>) = match kind {
        ReferenceKind::Formula => {
            let d = distribution_over_window(&inst, window, &opts).map_err(core)?;
            settings.quadrature = Some(QuadRecord::from(&opts));
            settings.passes = pass_records(&d.evaluation);
            (d.as_map(), vec![CONTOUR, AMPLITUDE, H_RECURSION, QUADRATURE])
        }
        ReferenceKind::Oracle => {
            let o = oracle_distribution(&inst, window).map_err(core)?;
            settings.oracle = Some(serde_json::to_value(&o.settings).expect("settings serialize"));
            (o.space.states().iter().cloned().zip(o.probabilities.iter().copied()).collect(), vec![GENERATOR])
        }
    };
    formulas.push("attempt_rejection_dynamics");
    let batch = simulate(&inst, trials, seed).map_err(core)?;
    let cmp = compare(&batch, &reference).map_err(core)?;
    let rows: Vec<ComparisonRow> = cmp
        .cells
        .iter()
        .map(|c| ComparisonRow {
            sites: join(c.configuration.sites()),
            species: join(c.configuration.species().labels()),
            observed: c.observed,
            expected: c.expected,
            z: c.z,
        })
        .collect();
    settings.window = Some([window.0, window.1]);
    settings.seed = Some(seed);
    settings.trials = Some(trials);
    settings.leak = Some(m.options.leak());
    settings.tolerance = Some(Z_LIMIT);
    settings.reference = Some(reference_name(kind).into());
    let scored: Vec<_> = cmp.cells.iter().filter(|c| c.expected >= MIN_EXPECTED).collect();
    let max_z = scored.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    let passed = cmp.passed();
    let mut r = report(m, passed, &formulas, settings);
    r.metrics.insert("cells".into(), rows.len() as f64);
    r.metrics.insert("scored_cells".into(), scored.len() as f64);
    r.metrics.insert("max_abs_z_scored".into(), max_z);
    r.metrics.insert("flagged".into(), cmp.flagged.len() as f64);
    if let Some(bad) = cmp.cells.iter().find(|c| cmp.flagged.contains(&c.configuration)) {
        r.counterexample = Some(serde_json::to_value(bad).expect("cell serializes"));
    }
    let summary = vec![format!(
        "{trials} trajectories vs {} reference: {} cells with expected count >= {MIN_EXPECTED}, max |z| {max_z:.2}, {} beyond {Z_LIMIT}",
        reference_name(kind),
        scored.len(),
        cmp.flagged.len()
    )];
    Ok(Outcome { report: r, table: Some(Table::Comparison(rows)), artifacts: vec![], summary })
}

fn reference_name(kind: ReferenceKind) -> &'static str {
    match kind {
        ReferenceKind::Formula => "formula",
        ReferenceKind::Oracle => "oracle",
    }
}

/// `h_σ^π` for all `σ` and all `π` in the orbit of `ν`, in exact arithmetic.
pub fn coefficients(p: &str, nu: &[u32], xi: &[String]) -> Result<Outcome, CliError> {
    let rate = crate::manifest::Rate::Text(p.to_string());
    let rates = RateParams::new(rate.to_rational()?).map_err(|e| CliError::Input(format!("p: {e}")))?;
    let nu = SpeciesMap::try_from(nu.to_vec()).map_err(|e| CliError::Input(format!("nu: {e}")))?;
    let xi: Vec<BigRational> = xi
        .iter()
        .map(|s| parse_rational(s).ok_or_else(|| CliError::Input(format!("xi: cannot parse {s:?} as a fraction"))))
        .collect::<Result<_, _>>()?;
    let table = compute_h_table(&nu, &xi, &rates).map_err(core)?;
    let rows = table.to_json();
    let mut summary = Vec::new();
    for (sigma, pi, v) in table.entries() {
        summary.push(format!("sigma {:?}  pi {:?}  h = {}", sigma.entries(), pi.labels(), v));
    }
    let settings = Settings {
        p: Some(rate.label()),
        n: Some(nu.len()),
        initial_species: Some(nu.labels().to_vec()),
        ..Settings::default()
    };
    let mut r = Report {
        format: REPORT_FORMAT,
        command: "coeffs".into(),
        passed: true,
        formulas: vec![H_RECURSION.into()],
        settings,
        metrics: BTreeMap::new(),
        counterexample: None,
    };
    r.metrics.insert("rows".into(), rows.as_array().map_or(0, Vec::len) as f64);
    Ok(Outcome { report: r, table: None, artifacts: vec![("coeffs.json".into(), json!({ "xi": xi_json(&xi), "rows": rows }))], summary })
}
