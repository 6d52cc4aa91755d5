//! Scalar kernels of the Bethe ansatz: `ε(ξ)`, `f(ξ, ξ′)`, `S(ξ, ξ′)` and the
//! single-species amplitude `A_σ(ξ)`.

use crate::error::{AsepError, Result};
use crate::permutations::Permutation;
use crate::scalar::Scalar;

/// Hop rates: right with `p`, left with `q = 1 − p`, `p ∈ (0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateParams<T> {
    p: T,
    q: T,
}

impl<T: Scalar> RateParams<T> {
    pub fn new(p: T) -> Result<Self> {
        let pf = p.re_f64();
        if p.is_zero() {
            return Err(AsepError::ZeroRightRate);
        }
        if !(0.0..=1.0).contains(&pf) {
            return Err(AsepError::InvalidRate(pf));
        }
        let q = T::one() - p.clone();
        Ok(Self { p, q })
    }

    /// Bypasses the `p + q = 1` invariant; used to check that identity
    /// verification actually detects broken operators.
    #[cfg(test)]
    pub(crate) fn unchecked(p: T, q: T) -> Self {
        Self { p, q }
    }

    pub fn p(&self) -> &T {
        &self.p
    }

    pub fn q(&self) -> &T {
        &self.q
    }

    /// Same rates in another scalar field (through f64).
    pub fn cast<U: Scalar>(&self) -> RateParams<U> {
        let p = U::from_f64(self.p.re_f64());
        let q = U::one() - p.clone();
        RateParams { p, q }
    }
}

impl RateParams<f64> {
    pub fn from_p(p: f64) -> Result<Self> {
        if !p.is_finite() {
            return Err(AsepError::InvalidRate(p));
        }
        Self::new(p)
    }
}

/// `ε(ξ) = p ξ⁻¹ + q ξ − 1`.
pub fn eps<T: Scalar>(xi: &T, rates: &RateParams<T>) -> Result<T> {
    if xi.is_zero() {
        return Err(AsepError::ZeroSpectralPoint);
    }
    Ok(rates.p.clone() / xi.clone() + rates.q.clone() * xi.clone() - T::one())
}

/// `f(ξ, ξ′) = p + q ξ ξ′ − ξ`.
pub fn f_kernel<T: Scalar>(xi: &T, xi2: &T, rates: &RateParams<T>) -> T {
    rates.p.clone() + rates.q.clone() * xi.clone() * xi2.clone() - xi.clone()
}

/// `S(ξ, ξ′) = −f(ξ, ξ′) / f(ξ′, ξ)`.
pub fn scattering<T: Scalar>(xi: &T, xi2: &T, rates: &RateParams<T>) -> Result<T> {
    let den = f_kernel(xi2, xi, rates);
    if T::is_pole(&den, xi, xi2) {
        return Err(AsepError::BethePole);
    }
    Ok(-f_kernel(xi, xi2, rates) / den)
}

/// `A_σ(ξ) = ∏_{inversions (i, j)} S(ξ_i, ξ_j)`.
pub fn amplitude<T: Scalar>(sigma: &Permutation, xi: &[T], rates: &RateParams<T>) -> Result<T> {
    if xi.len() != sigma.len() {
        return Err(AsepError::SizeMismatch { expected: sigma.len(), got: xi.len() });
    }
    sigma.inversions().into_iter().try_fold(T::one(), |acc, (i, j)| {
        Ok(acc * scattering(&xi[i - 1], &xi[j - 1], rates)?)
    })
}

/// `1 + S(ξ_a, ξ_b)` for every ordered pair of variable indices (0-based),
/// the only combination of `S` values the coefficient recursion needs.
#[derive(Debug, Clone)]
pub struct PairFactors<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Scalar> PairFactors<T> {
    pub fn new(xi: &[T], rates: &RateParams<T>) -> Result<Self> {
        Self::build(xi, rates, |a, b| a != b)
    }

    /// Only the entries with `a < b` (the others are left at zero), which is
    /// all a traversal along length-increasing steps touches.
    pub fn ascending(xi: &[T], rates: &RateParams<T>) -> Result<Self> {
        Self::build(xi, rates, |a, b| a < b)
    }

    fn build(xi: &[T], rates: &RateParams<T>, wanted: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let n = xi.len();
        let mut values = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                let v = if wanted(a, b) { T::one() + scattering(&xi[a], &xi[b], rates)? } else { T::zero() };
                values.push(v);
            }
        }
        Ok(Self { n, values })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                values.push(f(a, b));
            }
        }
        Self { n, values }
    }

    /// Overwrites every entry in place.
    pub fn refill(&mut self, mut f: impl FnMut(usize, usize) -> T) {
        let n = self.n;
        for (idx, v) in self.values.iter_mut().enumerate() {
            *v = f(idx / n, idx % n);
        }
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    /// `1 + S(ξ_a, ξ_b)` with 1-based variable indices.
    #[inline]
    pub fn get(&self, a: usize, b: usize) -> &T {
        &self.values[(a - 1) * self.n + (b - 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_complex::Complex64;
    use num_rational::BigRational;
    use num_traits::Zero;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn half() -> RateParams<BigRational> {
        RateParams::new(r(1, 2)).unwrap()
    }

    #[test]
    fn rate_validation() {
        assert_eq!(RateParams::new(r(0, 1)).unwrap_err(), AsepError::ZeroRightRate);
        assert!(RateParams::new(r(3, 2)).is_err());
        assert!(RateParams::from_p(f64::NAN).is_err());
        let one = RateParams::new(r(1, 1)).unwrap();
        assert!(one.q().is_zero());
    }

    #[test]
    fn eps_examples() {
        let rates = RateParams::new(r(3, 10)).unwrap();
        assert!(eps(&r(1, 1), &rates).unwrap().is_zero());
        assert_eq!(eps(&r(2, 1), &half()).unwrap(), r(1, 4));
        assert_eq!(eps(&r(0, 1), &half()).unwrap_err(), AsepError::ZeroSpectralPoint);
        // swapping p and q mirrors ξ ↦ 1/ξ
        let swapped = RateParams::new(r(7, 10)).unwrap();
        let x = r(5, 3);
        assert_eq!(eps(&x, &swapped).unwrap(), eps(&(r(1, 1) / x), &rates).unwrap());
    }

    #[test]
    fn f_examples() {
        let rates = half();
        assert!(f_kernel(&r(1, 1), &r(1, 1), &rates).is_zero());
        assert_eq!(f_kernel(&r(1, 2), &r(1, 3), &rates), r(1, 12));
        let (a, b) = (r(2, 7), r(-5, 3));
        assert_eq!(f_kernel(&a, &b, &rates) - f_kernel(&b, &a, &rates), b - a);
    }

    #[test]
    fn s_examples() {
        let rates = half();
        let x = r(3, 11);
        assert_eq!(scattering(&x, &x, &rates).unwrap(), r(-1, 1));
        assert_eq!(scattering(&r(1, 2), &r(1, 3), &rates).unwrap(), r(-1, 3));
        let (a, b) = (r(2, 9), r(-4, 7));
        let prod = scattering(&a, &b, &rates).unwrap() * scattering(&b, &a, &rates).unwrap();
        assert_eq!(prod, r(1, 1));
        // p + q ξ ξ′ − ξ′ = 0 at ξ = 0, ξ′ = p
        assert_eq!(scattering(&r(0, 1), &r(1, 2), &rates).unwrap_err(), AsepError::BethePole);
    }

    #[test]
    fn float_pole_guard() {
        let rates = RateParams::<Complex64>::new(Complex64::new(0.5, 0.0)).unwrap();
        let z = Complex64::new(0.0, 0.0);
        let p = Complex64::new(0.5, 0.0);
        assert_eq!(scattering(&z, &p, &rates).unwrap_err(), AsepError::BethePole);
    }

    #[test]
    fn amplitude_examples() {
        let rates = half();
        let xi = vec![r(1, 3), r(-2, 5)];
        assert_eq!(amplitude(&Permutation::identity(2), &xi, &rates).unwrap(), r(1, 1));
        let swap = Permutation::new(vec![2, 1]).unwrap();
        assert_eq!(
            amplitude(&swap, &xi, &rates).unwrap(),
            scattering(&xi[1], &xi[0], &rates).unwrap()
        );
    }

    fn small_rational() -> impl Strategy<Value = BigRational> {
        (-40i64..=40, 1i64..=17).prop_map(|(n, d)| r(n, d))
    }

    proptest! {
        #[test]
        fn s_involution_exact(a in small_rational(), b in small_rational(), pn in 1i64..10) {
            let rates = RateParams::new(r(pn, 10)).unwrap();
            if let (Ok(sab), Ok(sba)) = (scattering(&a, &b, &rates), scattering(&b, &a, &rates)) {
                prop_assert_eq!(sab * sba, r(1, 1));
            }
        }

        #[test]
        fn s_involution_float(re1 in -0.3f64..0.3, im1 in -0.3f64..0.3, re2 in -0.3f64..0.3, im2 in -0.3f64..0.3, p in 0.05f64..1.0) {
            let rates = RateParams::<Complex64>::new(Complex64::new(p, 0.0)).unwrap();
            let (a, b) = (Complex64::new(re1, im1), Complex64::new(re2, im2));
            if let (Ok(sab), Ok(sba)) = (scattering(&a, &b, &rates), scattering(&b, &a, &rates)) {
                prop_assert!(((sab * sba) - 1.0).norm() <= 1e-12);
            }
        }

        #[test]
        fn boundary_condition_kernel(a in small_rational(), b in small_rational(), pn in 1i64..10) {
            // f(b,a) + f(a,b) S(b,a) = 0
            let rates = RateParams::new(r(pn, 10)).unwrap();
            if let Ok(sba) = scattering(&b, &a, &rates) {
                let lhs = f_kernel(&b, &a, &rates) + f_kernel(&a, &b, &rates) * sba;
                prop_assert!(lhs.is_zero());
            }
        }
    }

    /// `A_{T_i σ} / A_σ = S(ξ_{σ(i+1)}, ξ_{σ(i)})` when `T_i` adds an inversion.
    #[test]
    fn amplitude_recursion_full_group() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let rates = RateParams::new(r(rng.gen_range(1..10), 10)).unwrap();
            for n in 2..=4 {
                let xi: Vec<BigRational> =
                    (0..n).map(|_| r(rng.gen_range(-30..=30), rng.gen_range(1..=13))).collect();
                for s in Permutation::all(n) {
                    for i in 1..n {
                        let t = s.swap_slots(i).unwrap();
                        let (Ok(a_s), Ok(a_t)) = (amplitude(&s, &xi, &rates), amplitude(&t, &xi, &rates)) else {
                            continue;
                        };
                        let ratio = scattering(&xi[s.at(i + 1) - 1], &xi[s.at(i) - 1], &rates).unwrap();
                        assert_eq!(a_t, a_s * ratio);
                    }
                }
            }
        }
    }
}
