//! Empirical checks of the two facts the method rests on: the Carleman
//! estimate for the Laplacian with the weight `e^{2λ(z+b)²}`, and convexity
//! of `J` on sets of admissible pairs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::grid::{Grid3, ScalarField, VecField};
use crate::objective::Functional;
use crate::rng::seeded;
use crate::system::{worst_amplitude, SystemCoeffs};
use crate::{Error, Result};

/// Sine modes per horizontal direction in [`sample_admissible_u`].
pub const SAMPLE_MODES: usize = 3;

/// A random `u` with `u = 0` on `∂Ω` and `∂z u = 0` on the top face:
/// `Σ a_kl sin(kπx') sin(lπy') · z'(A - z')² q(z')` with `x', y'` scaled
/// to `(0, 1)`, `z'` measured from the bottom and `q` a random cubic.
/// Normalised to `Σ u² h³ = 1`.
pub fn sample_admissible_u(grid: &Grid3, seed: u64) -> Result<ScalarField> {
    let mut rng = seeded(seed);
    let mut a = [[0.0; SAMPLE_MODES]; SAMPLE_MODES];
    for (k, row) in a.iter_mut().enumerate() {
        for (l, v) in row.iter_mut().enumerate() {
            *v = rng.gen_range(-1.0..=1.0) / ((k + 1) * (l + 1)) as f64;
        }
    }
    let q: [f64; 4] = core::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
    let lo = grid.origin;
    let hi = grid.upper();
    let height = hi[2] - lo[2];
    let mut u = ScalarField::from_fn(*grid, |x| {
        let xs = (x[0] - lo[0]) / (hi[0] - lo[0]);
        let ys = (x[1] - lo[1]) / (hi[1] - lo[1]);
        let z = x[2] - lo[2];
        let mut horiz = 0.0;
        for (k, row) in a.iter().enumerate() {
            let sx = (PI * (k + 1) as f64 * xs).sin();
            for (l, v) in row.iter().enumerate() {
                horiz += v * sx * (PI * (l + 1) as f64 * ys).sin();
            }
        }
        let zeta = z / height;
        let cubic = q[0] + zeta * (q[1] + zeta * (q[2] + zeta * q[3]));
        horiz * z * (height - z) * (height - z) * cubic
    })?;
    // sin(kπ) is not exactly zero in floating point.
    for p in 0..grid.len() {
        let [i, j, k] = grid.ijk(p);
        if grid.is_boundary(i, j, k) {
            u.values_mut()[p] = 0.0;
        }
    }
    let h3 = grid.spacing.powi(3);
    let norm = (u.values().iter().map(|v| v * v).sum::<f64>() * h3).sqrt();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("sample vanished".into()));
    }
    for v in u.values_mut() {
        *v /= norm;
    }
    Ok(u)
}

/// The parts of the discrete Carleman inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanTerms {
    /// `∫ (Δu)² φ`.
    pub laplacian: f64,
    /// `Σ_ij ∫ u_{x_i x_j}² φ`.
    pub hessian: f64,
    /// `∫ |∇u|² φ`.
    pub gradient: f64,
    /// `∫ u² φ`.
    pub value: f64,
}

impl CarlemanTerms {
    pub fn ratio(&self, lambda: f64) -> f64 {
        self.laplacian / (self.hessian / lambda + lambda * self.gradient + lambda.powi(3) * self.value)
    }
}

/// Weighted integrals by the trapezoid rule over all nodes of `Ω`. Difference
/// stencils reaching past `∂Ω` use the ghost values the boundary conditions
/// of an admissible `u` imply: odd reflection (`u = 0`) on the sides and the
/// bottom, even reflection (`u_z = 0`) on the top face. The weight is
/// divided by its maximum `e^{2λ(A+b)²}`, which cancels in the ratio.
pub fn carleman_terms(u: &ScalarField, lambda: f64, b: f64) -> Result<CarlemanTerms> {
    u.validate()?;
    let g = *u.grid();
    let [nx, ny, nz] = g.dims;
    let h = g.spacing;
    let (inv_h2, inv_4h2, inv_2h) = (1.0 / (h * h), 0.25 / (h * h), 0.5 / h);
    let v = u.values();
    // Index along an axis of length n, possibly one past either end, mapped
    // back inside with the sign of the reflection.
    let fold = |q: isize, n: usize, top_even: bool| -> (usize, f64) {
        if q < 0 {
            (1, -1.0)
        } else if q as usize >= n {
            (n - 2, if top_even { 1.0 } else { -1.0 })
        } else {
            (q as usize, 1.0)
        }
    };
    let at = |i: isize, j: isize, k: isize| {
        let (i, si) = fold(i, nx, false);
        let (j, sj) = fold(j, ny, false);
        let (k, sk) = fold(k, nz, true);
        si * sj * sk * v[g.idx(i, j, k)]
    };
    let edge = |q: usize, n: usize| if q == 0 || q + 1 == n { 0.5 } else { 1.0 };
    let z_top = g.upper()[2];
    let unit = [[1isize, 0, 0], [0, 1, 0], [0, 0, 1]];
    let mut t = CarlemanTerms { laplacian: 0.0, hessian: 0.0, gradient: 0.0, value: 0.0 };
    for k in 0..nz {
        let z = g.coord(0, 0, k)[2];
        let wk = (2.0 * lambda * ((z + b).powi(2) - (z_top + b).powi(2))).exp() * edge(k, nz);
        for j in 0..ny {
            for i in 0..nx {
                let w = wk * edge(i, nx) * edge(j, ny);
                let c = [i as isize, j as isize, k as isize];
                let shifted = |d: [isize; 3], s: isize, e: [isize; 3], r: isize| {
                    at(c[0] + s * d[0] + r * e[0], c[1] + s * d[1] + r * e[1], c[2] + s * d[2] + r * e[2])
                };
                let u0 = v[g.idx(i, j, k)];
                let mut second = [[0.0; 3]; 3];
                let mut grad = [0.0; 3];
                for a in 0..3 {
                    let da = unit[a];
                    let (up, dn) = (shifted(da, 1, da, 0), shifted(da, -1, da, 0));
                    second[a][a] = (up - 2.0 * u0 + dn) * inv_h2;
                    grad[a] = (up - dn) * inv_2h;
                    for c2 in a + 1..3 {
                        let dc = unit[c2];
                        let m = (shifted(da, 1, dc, 1) - shifted(da, 1, dc, -1) - shifted(da, -1, dc, 1)
                            + shifted(da, -1, dc, -1))
                            * inv_4h2;
                        second[a][c2] = m;
                        second[c2][a] = m;
                    }
                }
                let lap = second[0][0] + second[1][1] + second[2][2];
                t.laplacian += lap * lap * w;
                t.hessian += second.iter().flatten().map(|s| s * s).sum::<f64>() * w;
                t.gradient += grad.iter().map(|s| s * s).sum::<f64>() * w;
                t.value += u0 * u0 * w;
            }
        }
    }
    let h3 = h * h * h;
    t.laplacian *= h3;
    t.hessian *= h3;
    t.gradient *= h3;
    t.value *= h3;
    Ok(t)
}

/// `ρ = ∫(Δu)²φ / (λ⁻¹Σ∫u_{x_ix_j}²φ + λ∫|∇u|²φ + λ³∫u²φ)`, `φ = e^{2λ(z+b)²}`.
pub fn carleman_ratio(u: &ScalarField, lambda: f64, b: f64) -> Result<f64> {
    if !(lambda >= 1.0) {
        return Err(Error::InvalidConfig(format!("λ must be at least 1, got {lambda}")));
    }
    let t = carleman_terms(u, lambda, b)?;
    if !(t.value > 0.0) {
        return Err(Error::Degenerate("u vanishes identically".into()));
    }
    Ok(t.ratio(lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanConfig {
    pub h: f64,
    pub lambdas: Vec<f64>,
    pub samples: usize,
    pub b: f64,
    pub seed: u64,
    /// Smallest acceptable `ρ`.
    pub rho_floor: f64,
    /// Largest acceptable relative drop of the minimum `ρ` from the
    /// smallest to the largest `λ`.
    pub max_collapse: f64,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        Self {
            h: 1.0 / 16.0,
            lambdas: vec![4.0, 8.0, 16.0],
            samples: 200,
            b: 0.1,
            seed: 1,
            rho_floor: 1e-3,
            max_collapse: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaResult {
    pub lambda: f64,
    pub samples: usize,
    pub min_ratio: f64,
    pub mean_ratio: f64,
    /// Index and seed of the sample attaining the minimum.
    pub worst_sample: usize,
    pub worst_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarlemanReport {
    pub b: f64,
    pub h: f64,
    pub rho_floor: f64,
    pub max_collapse: f64,
    pub per_lambda: Vec<LambdaResult>,
    /// `1 - min ρ(λ_max) / min ρ(λ_min)`.
    pub collapse: f64,
    pub pass: bool,
}

/// Seeds of the samples of a sweep: one stream, drawn in order.
pub fn sample_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = seeded(seed);
    (0..count).map(|_| rng.gen()).collect()
}

/// Minimum `ρ` per `λ` over the same set of admissible samples.
pub fn carleman_sweep(grid: &Grid3, cfg: &CarlemanConfig) -> Result<CarlemanReport> {
    if cfg.samples == 0 || cfg.lambdas.is_empty() {
        return Err(Error::InvalidConfig("the sweep needs samples and λ values".into()));
    }
    let seeds = sample_seeds(cfg.seed, cfg.samples);
    let samples = seeds.iter().map(|&s| sample_admissible_u(grid, s)).collect::<Result<Vec<_>>>()?;
    let mut per_lambda = Vec::with_capacity(cfg.lambdas.len());
    for &lambda in &cfg.lambdas {
        let mut min = f64::INFINITY;
        let mut worst = 0;
        let mut sum = 0.0;
        for (i, u) in samples.iter().enumerate() {
            let r = carleman_ratio(u, lambda, cfg.b)?;
            sum += r;
            if r < min {
                min = r;
                worst = i;
            }
        }
        per_lambda.push(LambdaResult {
            lambda,
            samples: samples.len(),
            min_ratio: min,
            mean_ratio: sum / samples.len() as f64,
            worst_sample: worst,
            worst_seed: seeds[worst],
        });
    }
    let by_lambda = |pick_max: bool| {
        per_lambda
            .iter()
            .reduce(|a, b| if (b.lambda > a.lambda) == pick_max { b } else { a })
            .expect("non-empty")
            .min_ratio
    };
    let collapse = 1.0 - by_lambda(true) / by_lambda(false);
    let pass = per_lambda.iter().all(|r| r.min_ratio >= cfg.rho_floor) && collapse <= cfg.max_collapse;
    Ok(CarlemanReport {
        b: cfg.b,
        h: grid.spacing,
        rho_floor: cfg.rho_floor,
        max_collapse: cfg.max_collapse,
        per_lambda,
        collapse,
        pass,
    })
}

/// `J(w2) - J(w1) - <∇J(w1), w2 - w1>` with the plain dof inner product.
pub fn bregman_gap<F: Functional + ?Sized>(f: &F, w1: &VecField, w2: &VecField) -> Result<f64> {
    let (j1, g1) = f.value_and_grad(w1)?;
    let j2 = f.value(w2)?;
    let lin: f64 = g1.as_slice().iter().zip(w2.as_slice().iter().zip(w1.as_slice())).map(|(g, (b, a))| g * (b - a)).sum();
    Ok(j2 - j1 - lin)
}

/// `J(w1) - 2 J((w1 + w2)/2) + J(w2)`.
pub fn midpoint_second_difference<F: Functional + ?Sized>(f: &F, w1: &VecField, w2: &VecField) -> Result<f64> {
    let mut mid = w1.clone();
    for (m, b) in mid.as_mut_slice().iter_mut().zip(w2.as_slice()) {
        *m = 0.5 * (*m + b);
    }
    Ok(f.value(w1)? - 2.0 * f.value(&mid)? + f.value(w2)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvexityConfig {
    pub pairs: usize,
    pub seed: u64,
    /// Largest perturbation of `τ`.
    pub tau_scale: f64,
    /// Largest perturbation of each `w_n`, relative to that component's
    /// largest magnitude in the centre point.
    pub w_scale: f64,
    /// Gaps above `-floor` count as non-negative.
    pub floor: f64,
    /// Draws allowed per point before giving up on feasibility.
    pub max_resample: usize,
}

impl Default for ConvexityConfig {
    fn default() -> Self {
        Self { pairs: 50, seed: 1, tau_scale: 0.05, w_scale: 0.2, floor: 1e-10, max_resample: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub pairs: usize,
    pub gaps: Vec<f64>,
    pub second_differences: Vec<f64>,
    pub min_gap: f64,
    pub min_second_difference: f64,
    /// Fraction of gaps at or above `-floor`.
    pub nonnegative_fraction: f64,
    pub floor: f64,
    /// Draws thrown away for infeasibility.
    pub resampled: usize,
    pub pass: bool,
}

/// A random admissible point `centre + δ`, each component of `δ` an
/// independent admissible sample scaled to the configured size.
fn perturbed(
    centre: &VecField,
    coeffs: &SystemCoeffs,
    cfg: &ConvexityConfig,
    seeds: &mut impl Iterator<Item = u64>,
    resampled: &mut usize,
) -> Result<VecField> {
    let g = *centre.grid();
    for _ in 0..=cfg.max_resample {
        let mut w = centre.clone();
        for c in 0..centre.n_comp() {
            let u = sample_admissible_u(&g, seeds.next().expect("endless stream"))?;
            let peak = u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let size = if c == 0 {
                cfg.tau_scale
            } else {
                cfg.w_scale * centre.component(c).iter().fold(0.0f64, |m, v| m.max(v.abs()))
            };
            for (t, d) in w.component_mut(c).iter_mut().zip(u.values()) {
                *t += size * d / peak;
            }
        }
        let feasible = w.n_comp() < 2 || worst_amplitude(&w, coeffs).map_or(true, |(_, a)| a >= coeffs.m_floor());
        if feasible {
            return Ok(w);
        }
        *resampled += 1;
    }
    Err(Error::Degenerate(format!("no feasible perturbation in {} draws", cfg.max_resample + 1)))
}

/// Bregman gaps and segment second differences of `f` on random feasible
/// pairs around `centre`.
pub fn convexity_probe<F: Functional + ?Sized>(
    f: &F,
    centre: &VecField,
    coeffs: &SystemCoeffs,
    cfg: &ConvexityConfig,
) -> Result<ConvexityReport> {
    if cfg.pairs == 0 {
        return Err(Error::InvalidConfig("need at least one pair".into()));
    }
    let mut stream = seeded(cfg.seed);
    let mut seeds = core::iter::repeat_with(move || stream.gen::<u64>());
    let mut resampled = 0;
    let mut gaps = Vec::with_capacity(cfg.pairs);
    let mut second_differences = Vec::with_capacity(cfg.pairs);
    for _ in 0..cfg.pairs {
        let w1 = perturbed(centre, coeffs, cfg, &mut seeds, &mut resampled)?;
        let w2 = perturbed(centre, coeffs, cfg, &mut seeds, &mut resampled)?;
        gaps.push(bregman_gap(f, &w1, &w2)?);
        second_differences.push(midpoint_second_difference(f, &w1, &w2)?);
    }
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let min_gap = min(&gaps);
    let min_second_difference = min(&second_differences);
    let nonnegative_fraction = gaps.iter().filter(|&&g| g >= -cfg.floor).count() as f64 / gaps.len() as f64;
    Ok(ConvexityReport {
        pairs: cfg.pairs,
        pass: min_gap >= -cfg.floor && min_second_difference >= -cfg.floor,
        gaps,
        second_differences,
        min_gap,
        min_second_difference,
        nonnegative_fraction,
        floor: cfg.floor,
        resampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dz_oneside;
    use crate::objective::DofMap;

    fn omega(h: f64) -> Grid3 {
        Grid3::omega(1.0, h).unwrap()
    }

    #[test]
    fn samples_satisfy_the_boundary_conditions() {
        let h = 1.0 / 16.0;
        let g = omega(h);
        for seed in 0..5 {
            let u = sample_admissible_u(&g, seed).unwrap();
            let norm: f64 = u.values().iter().map(|v| v * v).sum::<f64>() * h.powi(3);
            assert!((norm - 1.0).abs() < 1e-12);
            for p in 0..g.len() {
                let [i, j, k] = g.ijk(p);
                if g.is_boundary(i, j, k) {
                    assert_eq!(u.values()[p], 0.0);
                }
            }
        }
    }

    #[test]
    fn top_derivative_of_samples_vanishes_at_second_order() {
        // The one-sided stencil sees u_z = 0 up to O(h²): halving h quarters it.
        let worst = |h: f64| {
            let u = sample_admissible_u(&omega(h), 7).unwrap();
            let peak = u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            dz_oneside(&u).unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs())) / peak
        };
        let (a, b) = (worst(1.0 / 16.0), worst(1.0 / 32.0));
        let order = (a / b).log2();
        assert!((order - 2.0).abs() < 0.3, "{a} {b} {order}");
    }

    #[test]
    fn samples_are_linearly_independent() {
        let g = omega(0.125);
        let a = sample_admissible_u(&g, 1).unwrap();
        let b = sample_admissible_u(&g, 2).unwrap();
        let dot = |x: &ScalarField, y: &ScalarField| x.values().iter().zip(y.values()).map(|(p, q)| p * q).sum::<f64>();
        let gram = dot(&a, &a) * dot(&b, &b) - dot(&a, &b).powi(2);
        assert!(gram > 1e-6 * dot(&a, &a) * dot(&b, &b));
        assert_eq!(a, sample_admissible_u(&g, 1).unwrap());
    }

    #[test]
    fn ratio_is_scale_invariant_and_rejects_bad_input() {
        let g = omega(0.125);
        let u = sample_admissible_u(&g, 3).unwrap();
        let mut v = u.clone();
        v.values_mut().iter_mut().for_each(|x| *x *= -4.0);
        let (a, b) = (carleman_ratio(&u, 4.0, 0.1).unwrap(), carleman_ratio(&v, 4.0, 0.1).unwrap());
        assert!(((a - b) / a).abs() < 1e-13);
        assert!(carleman_ratio(&u, 0.5, 0.1).is_err());
        assert!(carleman_ratio(&ScalarField::zeros(g), 4.0, 0.1).is_err());
    }

    /// `∫ f(z) dz` over `(0, 1)` by composite 5-point Gauss–Legendre.
    fn gauss(f: impl Fn(f64) -> f64, panels: usize) -> f64 {
        let x = [0.0, 0.5384693101056831, -0.5384693101056831, 0.906179845938664, -0.906179845938664];
        let w = [0.5688888888888889, 0.4786286704993665, 0.4786286704993665, 0.2369268850561891, 0.2369268850561891];
        let step = 1.0 / panels as f64;
        let mut s = 0.0;
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * step;
            for q in 0..5 {
                s += w[q] * f(mid + 0.5 * step * x[q]);
            }
        }
        0.5 * step * s
    }

    #[test]
    fn ratio_matches_tensor_quadrature() {
        // u = sin(πx') sin(πy') Z(z), Z = z(1 - z)². In x and y everything
        // reduces to ∫sin² = ∫cos² = 1/2 (times π² per derivative).
        let (lambda, b) = (8.0, 0.1);
        let zf = |z: f64| z * (1.0 - z) * (1.0 - z);
        let zd = |z: f64| (1.0 - z) * (1.0 - 3.0 * z);
        let zdd = |z: f64| 6.0 * z - 4.0;
        let phi = |z: f64| (2.0 * lambda * ((z + b).powi(2) - (1.0 + b).powi(2))).exp();
        let p2 = PI * PI;
        let q = |f: &dyn Fn(f64) -> f64| gauss(|z| f(z) * phi(z), 2000);
        let lap = 0.25 * q(&|z| (zdd(z) - 2.0 * p2 * zf(z)).powi(2));
        // u_xx² + u_yy² + u_zz² + 2(u_xy² + u_xz² + u_yz²).
        let hess = 0.25 * q(&|z| 2.0 * p2 * p2 * zf(z).powi(2) + zdd(z).powi(2) + 2.0 * p2 * p2 * zf(z).powi(2))
            + 0.25 * q(&|z| 4.0 * p2 * zd(z).powi(2));
        let grad = 0.25 * q(&|z| 2.0 * p2 * zf(z).powi(2) + zd(z).powi(2));
        let val = 0.25 * q(&|z| zf(z).powi(2));
        let exact = CarlemanTerms { laplacian: lap, hessian: hess, gradient: grad, value: val }.ratio(lambda);

        let g = omega(1.0 / 64.0);
        let u = ScalarField::from_fn(g, |x| (PI * (x[0] + 0.5)).sin() * (PI * (x[1] + 0.5)).sin() * zf(x[2])).unwrap();
        let got = carleman_ratio(&u, lambda, b).unwrap();
        assert!(((got - exact) / exact).abs() < 0.02, "{got} vs {exact}");
    }

    #[test]
    fn sweep_is_deterministic_and_validates() {
        let g = omega(0.125);
        let cfg = CarlemanConfig { samples: 10, lambdas: vec![4.0, 8.0], ..Default::default() };
        let a = carleman_sweep(&g, &cfg).unwrap();
        assert_eq!(a, carleman_sweep(&g, &cfg).unwrap());
        assert_eq!(a.per_lambda.len(), 2);
        assert!(a.per_lambda.iter().all(|r| r.min_ratio > 0.0 && r.min_ratio <= r.mean_ratio));
        assert!(carleman_sweep(&g, &CarlemanConfig { samples: 0, ..cfg.clone() }).is_err());
        assert!(carleman_sweep(&g, &CarlemanConfig { lambdas: vec![], ..cfg }).is_err());
    }

    /// `Σ_interior (Δ_h w)² h³` summed over components: quadratic, so its
    /// Bregman gap is the same form evaluated at `w2 - w1`.
    struct LaplaceEnergy(DofMap);

    impl LaplaceEnergy {
        fn laplacians(w: &VecField) -> Vec<ScalarField> {
            (0..w.n_comp()).map(|c| crate::grid::laplacian7(&w.component_field(c)).unwrap()).collect()
        }
    }

    impl Functional for LaplaceEnergy {
        fn dofs(&self) -> &DofMap {
            &self.0
        }
        fn value(&self, w: &VecField) -> Result<f64> {
            let g = *w.grid();
            let h3 = g.spacing.powi(3);
            let mut s = 0.0;
            for l in Self::laplacians(w) {
                for p in 0..g.len() {
                    let [i, j, k] = g.ijk(p);
                    if g.is_interior(i, j, k) {
                        s += l.values()[p].powi(2);
                    }
                }
            }
            Ok(s * h3)
        }
        fn value_and_grad(&self, w: &VecField) -> Result<(f64, VecField)> {
            // ∂/∂w_q of Σ_p (L w)_p² = 2 Σ_p (L w)_p L_pq, L symmetric in
            // its stencil: 2 (Lᵀ r)_q with r = L w on interior nodes.
            let g = *w.grid();
            let h = g.spacing;
            let h3 = h.powi(3);
            let mut grad = VecField::zeros(g, w.n_comp());
            for (c, l) in Self::laplacians(w).into_iter().enumerate() {
                let out = grad.component_mut(c);
                for p in 0..g.len() {
                    let [i, j, k] = g.ijk(p);
                    if !g.is_interior(i, j, k) {
                        continue;
                    }
                    let r = 2.0 * l.values()[p] * h3 / (h * h);
                    out[p] -= 6.0 * r;
                    for q in [p - 1, p + 1, p - g.dims[0], p + g.dims[0], p - g.dims[0] * g.dims[1], p + g.dims[0] * g.dims[1]] {
                        out[q] += r;
                    }
                }
            }
            self.0.zero_fixed(&mut grad);
            Ok((self.value(w)?, grad))
        }
    }

    #[test]
    fn quadratic_gap_is_the_form_of_the_difference() {
        let g = omega(0.125);
        let f = LaplaceEnergy(DofMap::new(g, 2));
        let mk = |s: u64| {
            let a = sample_admissible_u(&g, s).unwrap();
            let b = sample_admissible_u(&g, s + 100).unwrap();
            VecField::from_components(&[a, b]).unwrap()
        };
        let (w1, w2) = (mk(1), mk(2));
        let mut diff = w2.clone();
        for (d, a) in diff.as_mut_slice().iter_mut().zip(w1.as_slice()) {
            *d -= a;
        }
        let gap = bregman_gap(&f, &w1, &w2).unwrap();
        let form = f.value(&diff).unwrap();
        assert!(form > 0.0);
        assert!(((gap - form) / form).abs() < 1e-10, "{gap} vs {form}");
        assert_eq!(bregman_gap(&f, &w1, &w1).unwrap(), 0.0);
        // The midpoint second difference of a quadratic is half the form.
        let sd = midpoint_second_difference(&f, &w1, &w2).unwrap();
        assert!(((sd - 0.5 * form) / form).abs() < 1e-10);
    }
}
