//! Orthonormal polynomials on `L²(0, T1)` that vanish at `t = 0`.
//!
//! The basis is Gram–Schmidt applied to `{t, t², ..., t^N}`. The
//! orthogonalisation runs in exact rational arithmetic on the rescaled
//! interval `(0, 1)`, where the moments are `∫ s^(a+b) ds = 1/(a+b+1)`; only the
//! final normalisation takes a square root in `f64`. This sidesteps the
//! Hilbert-matrix conditioning of the monomials.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigInt;
use num_rational::BigRational;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest supported number of basis functions.
pub const MAX_TERMS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyBasis {
    t1: f64,
    n: usize,
    /// `coeffs[n-1][k]` is the coefficient of `t^k` in `P_n`; `k = 0` is always 0.
    coeffs: Vec<Vec<f64>>,
    /// `s[n-1] = P_n'(0)`.
    s: Vec<f64>,
    /// Row-major `N x N`, `d[(m-1)*N + (n-1)] = ∫ P_n'(t) P_m(t) dt`.
    d: Vec<f64>,
}

fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// `∫_0^1 p q ds` for coefficient vectors indexed by power.
fn inner(p: &[BigRational], q: &[BigRational]) -> BigRational {
    let mut acc = BigRational::zero();
    for (a, pa) in p.iter().enumerate() {
        if pa.is_zero() {
            continue;
        }
        for (b, qb) in q.iter().enumerate() {
            if qb.is_zero() {
                continue;
            }
            acc += pa * qb * ratio(1, (a + b + 1) as i64);
        }
    }
    acc
}

/// `∫_0^1 p' q ds`.
fn inner_deriv(p: &[BigRational], q: &[BigRational]) -> BigRational {
    let mut acc = BigRational::zero();
    for (a, pa) in p.iter().enumerate().skip(1) {
        if pa.is_zero() {
            continue;
        }
        for (b, qb) in q.iter().enumerate() {
            if qb.is_zero() {
                continue;
            }
            acc += pa * qb * ratio(a as i64, (a + b) as i64);
        }
    }
    acc
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

impl PolyBasis {
    /// Orthonormal basis `P_1..P_N` of `span{t..t^N}` in `L²(0, t1)`.
    pub fn build(t1: f64, n: usize) -> Result<Self> {
        if !(t1 > 0.0 && t1.is_finite()) {
            return Err(Error::InvalidBasis(format!("T1 must be positive, got {t1}")));
        }
        if !(1..=MAX_TERMS).contains(&n) {
            return Err(Error::InvalidBasis(format!("N must be in 1..={MAX_TERMS}, got {n}")));
        }

        // Monic orthogonal polynomials on (0, 1), exact.
        let mut q: Vec<Vec<BigRational>> = Vec::with_capacity(n);
        let mut norms: Vec<BigRational> = Vec::with_capacity(n);
        for deg in 1..=n {
            let mut p = vec![BigRational::zero(); n + 1];
            p[deg] = ratio(1, 1);
            let mono = p.clone();
            for (qk, nk) in q.iter().zip(&norms) {
                let c = inner(&mono, qk) / nk;
                for (pi, qi) in p.iter_mut().zip(qk) {
                    *pi -= &c * qi;
                }
            }
            norms.push(inner(&p, &p));
            q.push(p);
        }

        let scale: Vec<f64> = norms.iter().map(|nm| 1.0 / to_f64(nm).sqrt()).collect();
        let mut coeffs = Vec::with_capacity(n);
        for (qn, &sc) in q.iter().zip(&scale) {
            let row: Vec<f64> = qn
                .iter()
                .enumerate()
                .map(|(k, c)| to_f64(c) * sc / t1.powf(k as f64 + 0.5))
                .collect();
            coeffs.push(row);
        }
        let s = coeffs.iter().map(|row| row[1]).collect();

        let mut d = vec![0.0; n * n];
        for m in 0..n {
            for nn in 0..n {
                d[m * n + nn] = to_f64(&inner_deriv(&q[nn], &q[m])) * scale[nn] * scale[m] / t1;
            }
        }

        Ok(Self { t1, n, coeffs, s, d })
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Monomial coefficients of `P_n` (1-based `n`), constant term first.
    pub fn coefficients(&self, n: usize) -> &[f64] {
        &self.coeffs[n - 1]
    }

    /// `P_n'(0)` for `n = 1..N`.
    pub fn s(&self) -> &[f64] {
        &self.s
    }

    /// `D_{mn} = ∫_0^{T1} P_n'(t) P_m(t) dt`, 1-based.
    pub fn d(&self, m: usize, n: usize) -> f64 {
        self.d[(m - 1) * self.n + (n - 1)]
    }

    /// Row-major coupling matrix, `matrix[m * N + n]` with 0-based indices.
    pub fn d_matrix(&self) -> &[f64] {
        &self.d
    }

    /// `P_n(t)` by Horner's rule. Polynomials are global, so any `t` works.
    pub fn eval(&self, n: usize, t: f64) -> f64 {
        self.coeffs[n - 1].iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    /// `P_n'(t)`.
    pub fn eval_deriv(&self, n: usize, t: f64) -> f64 {
        let c = &self.coeffs[n - 1];
        let mut acc = 0.0;
        for k in (1..c.len()).rev() {
            acc = acc * t + k as f64 * c[k];
        }
        acc
    }
}
