//! Periodic trapezoid rules on products of circles `|ξ_i| = r`.
//!
//! For an integrand analytic on an annulus around the torus, the rule with
//! `K` nodes per variable is exact for every Laurent monomial `ξ^n` with
//! `0 < |n + 1| < K` and converges geometrically otherwise.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::bethe::RateParams;
use crate::error::{AsepError, Result};

pub const DEFAULT_SAFETY: f64 = 0.5;
pub const DEFAULT_NODES: usize = 64;
pub const MAX_NODES: usize = 1024;
/// Largest tensor grid (`K^N`) the coefficient extractor will allocate.
pub const MAX_GRID: usize = 1 << 24;

/// Circle radius, node count per variable and number of variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContourSpec {
    radius: f64,
    nodes: usize,
    dimension: usize,
}

impl ContourSpec {
    pub fn new(radius: f64, nodes: usize, dimension: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(AsepError::InadmissibleContour(format!("radius {radius} must be positive")));
        }
        if nodes < 8 || !nodes.is_multiple_of(2) {
            return Err(AsepError::InadmissibleContour(format!("node count {nodes} must be even and at least 8")));
        }
        if dimension == 0 {
            return Err(AsepError::InadmissibleContour("dimension must be at least 1".into()));
        }
        Ok(Self { radius, nodes, dimension })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn grid_size(&self) -> Option<usize> {
        self.nodes.checked_pow(self.dimension as u32)
    }

    /// Rejects radii at or beyond the pole-exclusion bound for these rates.
    pub fn check_admissible(&self, rates: &RateParams<f64>) -> Result<()> {
        let bound = pole_bound(rates, self.dimension);
        if self.radius >= bound {
            return Err(AsepError::InadmissibleContour(format!(
                "radius {} is not below the pole-exclusion bound {bound}",
                self.radius
            )));
        }
        Ok(())
    }

    /// `ξ_k = r·exp(2πik/K)`.
    pub fn node(&self, k: usize) -> Complex64 {
        Complex64::from_polar(self.radius, 2.0 * PI * k as f64 / self.nodes as f64)
    }

    pub fn node_values(&self) -> Vec<Complex64> {
        (0..self.nodes).map(|k| self.node(k)).collect()
    }
}

/// Positive root `r*` of `q r² + r − p = 0` (`r* = p` when `q = 0`). For
/// `|ξ|, |ξ′| ≤ r < r*`, `|p + qξξ′ − ξ′| ≥ p − r − q r² > 0`.
pub fn radius_bound(rates: &RateParams<f64>) -> f64 {
    let (p, q) = (*rates.p(), *rates.q());
    2.0 * p / (1.0 + (1.0 + 4.0 * p * q).sqrt())
}

/// Bound on admissible radii; a single variable has no scattering factors.
pub fn pole_bound(rates: &RateParams<f64>, dimension: usize) -> f64 {
    if dimension < 2 {
        f64::INFINITY
    } else {
        radius_bound(rates)
    }
}

/// `safety · r*`.
pub fn choose_radius(rates: &RateParams<f64>, safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety < 1.0) {
        return Err(AsepError::Precondition(format!("safety factor {safety} must lie in (0, 1)")));
    }
    Ok(safety * radius_bound(rates))
}

/// Neumaier-compensated complex accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: Complex64,
    carry: Complex64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: Complex64) {
        self.sum.re = two_sum(self.sum.re, x.re, &mut self.carry.re);
        self.sum.im = two_sum(self.sum.im, x.im, &mut self.carry.im);
    }

    pub fn value(&self) -> Complex64 {
        self.sum + self.carry
    }
}

fn two_sum(s: f64, x: f64, carry: &mut f64) -> f64 {
    let t = s + x;
    if s.abs() >= x.abs() {
        *carry += (s - t) + x;
    } else {
        *carry += (x - t) + s;
    }
    t
}

const PARTITIONS: usize = 256;

/// `K^{-N} Σ f(ξ_{k_1}, …, ξ_{k_N}) ∏ ξ_{k_i}`, the trapezoid value of
/// `(2πi)^{-N} ∮ f dξ_1 ⋯ dξ_N`.
///
/// Node tuples are split into a fixed number of contiguous lexicographic
/// ranges, summed with compensation, and the partial sums are combined in
/// range order, so the result does not depend on the thread count.
pub fn integrate_tensor<F>(f: F, spec: &ContourSpec) -> Result<Complex64>
where
    F: Fn(&[Complex64]) -> Complex64 + Sync,
{
    let k = spec.nodes;
    let n = spec.dimension;
    let total = spec
        .grid_size()
        .ok_or_else(|| AsepError::Infeasible(format!("{k}^{n} quadrature nodes")))?;
    let xs = spec.node_values();
    let parts = PARTITIONS.min(total);
    let partials: Vec<Result<CompensatedSum>> = (0..parts)
        .into_par_iter()
        .map(|part| {
            let lo = part * total / parts;
            let hi = (part + 1) * total / parts;
            let mut digits = vec![0usize; n];
            let mut point = vec![Complex64::new(0.0, 0.0); n];
            let mut acc = CompensatedSum::default();
            for idx in lo..hi {
                let mut rest = idx;
                for d in (0..n).rev() {
                    digits[d] = rest % k;
                    rest /= k;
                }
                let mut jac = Complex64::new(1.0, 0.0);
                for d in 0..n {
                    point[d] = xs[digits[d]];
                    jac *= point[d];
                }
                let v = f(&point);
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(AsepError::NonFinite);
                }
                acc.add(v * jac);
            }
            Ok(acc)
        })
        .collect();
    let mut acc = CompensatedSum::default();
    for part in partials {
        acc.add(part?.value());
    }
    Ok(acc.value() / total as f64)
}

/// In-place unnormalised inverse DFT along every axis of a row-major
/// `K × ⋯ × K` array: `out[e] = Σ_k data[k] exp(2πi k·e / K)`.
pub(crate) fn inverse_dft_nd(data: &mut [Complex64], k: usize, n: usize) {
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(k);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut line = vec![Complex64::new(0.0, 0.0); k];
    for axis in 0..n {
        let stride = k.pow((n - 1 - axis) as u32);
        if stride == 1 {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        let block = stride * k;
        for base in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[start + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    data[start + j * stride] = *v;
                }
            }
        }
    }
}

/// The `K/2`-node grid obtained by keeping every other node on each axis.
pub(crate) fn subsample_half(data: &[Complex64], k: usize, n: usize) -> Vec<Complex64> {
    let h = k / 2;
    let total = h.pow(n as u32);
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rest = idx;
        let mut src = 0;
        let mut scale = 1;
        for _ in 0..n {
            src += 2 * (rest % h) * scale;
            rest /= h;
            scale *= k;
        }
        out.push(data[src]);
    }
    out
}
