//! From boundary recordings to the Cauchy data of the elliptic system:
//! arrival picking, double time integration, the time shift `t -> t + τ(x)`,
//! projection onto the polynomial basis, and multiplicative noise.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::basis::PolyBasis;
use crate::forward::BoundaryRecording;
use crate::grid::Grid3;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquireConfig {
    /// Length of the window after the arrival, `T1`.
    pub t1: f64,
    /// Number of basis functions `N`.
    pub n_basis: usize,
    /// A local maximum qualifies as the arrival when it reaches this fraction
    /// of the global maximum of `|u|`.
    pub pick_threshold: f64,
    /// Rescale `w_n` data so the median boundary amplitude `Σ s_n q_n` is 1.
    pub normalize_amplitude: bool,
}

impl Default for AcquireConfig {
    fn default() -> Self {
        Self { t1: 0.1, n_basis: 3, pick_threshold: 0.5, normalize_amplitude: true }
    }
}

/// Three-point parabolic refinement of a peak at sample `k`, in samples.
fn parabolic_offset(ym: f64, y0: f64, yp: f64) -> f64 {
    let den = ym - 2.0 * y0 + yp;
    if den.abs() < f64::MIN_POSITIVE || den >= 0.0 {
        0.0
    } else {
        (0.5 * (ym - yp) / den).clamp(-0.5, 0.5)
    }
}

/// Time of the first wave whose peak reaches `threshold` times the largest
/// `|u|` of the trace. Ties go to the earlier peak.
pub fn pick_arrival(trace: &[f64], dt: f64, threshold: f64) -> Result<f64> {
    pick_arrival_node(trace, dt, threshold, 0)
}

fn pick_arrival_node(trace: &[f64], dt: f64, threshold: f64, node: usize) -> Result<f64> {
    let n = trace.len();
    if n < 3 {
        return Err(Error::TooFewSamples(n));
    }
    let gmax = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(gmax > 0.0) {
        return Err(Error::NoArrival { node });
    }
    let level = threshold * gmax;
    let a = |k: usize| trace[k].abs();
    let mut chosen = None;
    for k in 1..n - 1 {
        if a(k) >= level && a(k) >= a(k - 1) && a(k) >= a(k + 1) && a(k) > 0.0 {
            chosen = Some(k);
            break;
        }
    }
    let k = match chosen {
        Some(k) => k,
        // The maximum sits at an end of the trace.
        None => (0..n).find(|&k| a(k) == gmax).unwrap_or(0),
    };
    if k == 0 || k + 1 == n {
        return Ok(k as f64 * dt);
    }
    Ok((k as f64 + parabolic_offset(a(k - 1), a(k), a(k + 1))) * dt)
}

/// Cumulative trapezoid integral, starting from zero.
pub fn cumulative_integral(f: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// `p(t) = ∫_0^t ∫_0^y u(s) ds dy` by two cumulative trapezoid sums.
pub fn double_time_integral(trace: &[f64], dt: f64) -> Result<Vec<f64>> {
    if trace.len() < 2 {
        return Err(Error::TooFewSamples(trace.len()));
    }
    Ok(cumulative_integral(&cumulative_integral(trace, dt), dt))
}

/// Linear interpolation of uniformly sampled `f` at time `t >= 0`.
fn sample_at(f: &[f64], dt: f64, t: f64) -> f64 {
    let s = t / dt;
    let k = s.floor() as usize;
    if k + 1 >= f.len() {
        return f[f.len() - 1];
    }
    let frac = s - k as f64;
    f[k] + frac * (f[k + 1] - f[k])
}

fn window_len(dt: f64, t1: f64) -> usize {
    (t1 / dt).round() as usize + 1
}

fn check_window(len: usize, dt: f64, tau0: f64, t1: f64) -> Result<()> {
    let length = dt * (len - 1) as f64;
    if !(tau0 >= 0.0) || tau0 + t1 > length + 1e-9 * dt {
        return Err(Error::ShiftOutOfRange { shift: tau0, window: t1, length });
    }
    Ok(())
}

/// `w(t) = p(τ0 + t) - p(τ0)` on `[0, T1]`, sampled with the step of `p`.
/// Subtracting `p(τ0)` restores `w(0) = 0`, which picking error and the
/// mollified source otherwise violate slightly.
pub fn time_shift(p: &[f64], dt: f64, tau0: f64, t1: f64) -> Result<Vec<f64>> {
    check_window(p.len(), dt, tau0, t1)?;
    let base = sample_at(p, dt, tau0);
    Ok((0..window_len(dt, t1)).map(|j| sample_at(p, dt, tau0 + j as f64 * dt) - base).collect())
}

// Six-point Gauss–Legendre on [0, 1].
const GL_NODES: [f64; 6] = [
    0.033_765_242_898_423_99,
    0.169_395_306_766_867_74,
    0.380_690_406_958_401_5,
    0.619_309_593_041_598_5,
    0.830_604_693_233_132_3,
    0.966_234_757_101_576,
];
const GL_WEIGHTS: [f64; 6] = [
    0.085_662_246_189_585_17,
    0.180_380_786_524_069_3,
    0.233_956_967_286_345_5,
    0.233_956_967_286_345_5,
    0.180_380_786_524_069_3,
    0.085_662_246_189_585_17,
];

/// Weights `W[n][j]` with `∫ w P_n ≈ Σ_j W[n][j] w_j`: `w` is interpolated by
/// a cubic through the four samples nearest each interval and the product
/// with `P_n` is integrated exactly. Cubic data is therefore projected
/// without error. Fewer than four samples fall back to linear interpolation.
fn projection_weights(m: usize, dt: f64, basis: &PolyBasis) -> Vec<Vec<f64>> {
    let n_basis = basis.len();
    let mut weights = vec![vec![0.0; m]; n_basis];
    if m < 2 {
        return weights;
    }
    let order = if m >= 4 { 4 } else { 2 };
    for k in 0..m - 1 {
        let first = if order == 4 { k.saturating_sub(1).min(m - 4) } else { k };
        for (x, gw) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let t = (k as f64 + x) * dt;
            let s = k as f64 + x;
            for a in 0..order {
                let mut l = 1.0;
                for b in 0..order {
                    if a != b {
                        l *= (s - (first + b) as f64) / (a as f64 - b as f64);
                    }
                }
                for (n, row) in weights.iter_mut().enumerate() {
                    row[first + a] += gw * dt * l * basis.eval(n + 1, t);
                }
            }
        }
    }
    weights
}

/// `q_n = ∫_0^{T1} w(t) P_n(t) dt` for `n = 1..N`, with `w` sampled at step `dt`
/// from `t = 0`.
pub fn project_basis(w: &[f64], dt: f64, basis: &PolyBasis) -> Vec<f64> {
    projection_weights(w.len(), dt, basis)
        .iter()
        .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
        .collect()
}

/// Multiplies the `Γ0` data by `1 + ε ξ_t`, one uniform `ξ_t ∈ [-1, 1]` per
/// time sample shared by every node. The sub-surface layers get the same
/// factor so that `f1` stays their one-sided derivative.
pub fn add_noise(recording: &BoundaryRecording, eps: f64, seed: u64) -> BoundaryRecording {
    let mut out = recording.clone();
    if eps == 0.0 {
        return out;
    }
    let mut rng = rng::seeded(seed);
    let xi: Vec<f64> = (0..recording.n_times).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let n_t = recording.n_times;
    let scale = |trace: &mut [f64]| {
        for (v, x) in trace.iter_mut().zip(&xi) {
            *v *= 1.0 + eps * x;
        }
    };
    for (pos, &node) in recording.top_nodes.iter().enumerate() {
        let b = recording.boundary_position(node).expect("top nodes are boundary nodes");
        scale(&mut out.f0[b * n_t..(b + 1) * n_t]);
        scale(&mut out.f1[pos * n_t..(pos + 1) * n_t]);
        scale(&mut out.below[0][pos * n_t..(pos + 1) * n_t]);
        scale(&mut out.below[1][pos * n_t..(pos + 1) * n_t]);
    }
    out
}

/// Travel times on the boundary and their normal derivative on `Γ0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickedArrivals {
    /// One entry per `recording.boundary_nodes`.
    pub tau0: Vec<f64>,
    /// One entry per `recording.top_nodes`.
    pub dz_tau0: Vec<f64>,
}

/// Picks arrivals on every boundary node; `∂zτ` on `Γ0` comes from picks on
/// the top face and the two layers below it.
pub fn pick_all(recording: &BoundaryRecording, threshold: f64) -> Result<PickedArrivals> {
    let dt = recording.dt;
    let tau0 = (0..recording.boundary_nodes.len())
        .map(|pos| pick_arrival_node(recording.trace(pos), dt, threshold, recording.boundary_nodes[pos]))
        .collect::<Result<Vec<_>>>()?;
    let inv_2h = 0.5 / recording.omega.spacing;
    let mut dz_tau0 = Vec::with_capacity(recording.top_nodes.len());
    for (pos, &node) in recording.top_nodes.iter().enumerate() {
        let t0 = tau0[recording.boundary_position(node).expect("top node recorded")];
        let t1 = pick_arrival_node(recording.below_trace(0, pos), dt, threshold, node)?;
        let t2 = pick_arrival_node(recording.below_trace(1, pos), dt, threshold, node)?;
        dz_tau0.push((3.0 * t0 - 4.0 * t1 + t2) * inv_2h);
    }
    for (v, &n) in tau0.iter().zip(&recording.boundary_nodes) {
        if !(*v > 0.0) {
            return Err(Error::NoArrival { node: n });
        }
    }
    Ok(PickedArrivals { tau0, dz_tau0 })
}

/// Dirichlet data `q0 = (τ, q_1..q_N)` on `∂Ω` and Neumann data
/// `q1 = (∂zτ, q_1^1..q_N^1)` on `Γ0`, both node-major with `N + 1` entries
/// per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyProjection {
    pub omega: Grid3,
    pub n_comp: usize,
    pub boundary_nodes: Vec<usize>,
    pub q0: Vec<f64>,
    pub top_nodes: Vec<usize>,
    pub q1: Vec<f64>,
    /// Factor applied to components `1..N` of the raw projections.
    pub amplitude_scale: f64,
}

impl CauchyProjection {
    pub fn q0_at(&self, pos: usize) -> &[f64] {
        &self.q0[pos * self.n_comp..(pos + 1) * self.n_comp]
    }

    pub fn q1_at(&self, pos: usize) -> &[f64] {
        &self.q1[pos * self.n_comp..(pos + 1) * self.n_comp]
    }

    /// The same data on a coarser nested grid of `Ω` (spacing a power-of-two
    /// multiple of this one), keeping coincident nodes.
    pub fn restrict_to(&self, coarse: &Grid3) -> Result<CauchyProjection> {
        let ratio = coarse.spacing / self.omega.spacing;
        let stride = ratio.round() as usize;
        if stride == 0 || (ratio - stride as f64).abs() > 1e-9 {
            return Err(Error::GridMismatch(format!("spacing ratio {ratio} is not an integer")));
        }
        let off = self.omega.sub_offset(coarse, stride)?;
        if off != [0, 0, 0] || (0..3).any(|a| (coarse.dims[a] - 1) * stride + 1 != self.omega.dims[a]) {
            return Err(Error::GridMismatch("coarse grid must cover the same Ω".into()));
        }
        let map = |node: usize| {
            let [i, j, k] = coarse.ijk(node);
            self.omega.idx(i * stride, j * stride, k * stride)
        };
        let mut boundary_nodes = Vec::new();
        let mut q0 = Vec::new();
        let mut top_nodes = Vec::new();
        let mut q1 = Vec::new();
        for node in 0..coarse.len() {
            let [i, j, k] = coarse.ijk(node);
            if !coarse.is_boundary(i, j, k) {
                continue;
            }
            let fine = map(node);
            let pos = self
                .boundary_nodes
                .binary_search(&fine)
                .map_err(|_| Error::GridMismatch("missing boundary node".into()))?;
            boundary_nodes.push(node);
            q0.extend_from_slice(self.q0_at(pos));
            if k + 1 == coarse.dims[2] && coarse.is_interior(i, j, k - 1) {
                let tpos = self
                    .top_nodes
                    .binary_search(&fine)
                    .map_err(|_| Error::GridMismatch("missing top node".into()))?;
                top_nodes.push(node);
                q1.extend_from_slice(self.q1_at(tpos));
            }
        }
        Ok(CauchyProjection {
            omega: *coarse,
            n_comp: self.n_comp,
            boundary_nodes,
            q0,
            top_nodes,
            q1,
            amplitude_scale: self.amplitude_scale,
        })
    }

    /// `Σ s_n q_n` at every boundary node.
    pub fn boundary_amplitudes(&self, basis: &PolyBasis) -> Vec<f64> {
        (0..self.boundary_nodes.len())
            .map(|pos| {
                let q = self.q0_at(pos);
                basis.s().iter().zip(&q[1..]).map(|(s, v)| s * v).sum()
            })
            .collect()
    }
}

/// Builds the Cauchy data from a recording and boundary travel times.
pub fn build_cauchy(
    recording: &BoundaryRecording,
    arrivals: &PickedArrivals,
    basis: &PolyBasis,
    normalize_amplitude: bool,
) -> Result<CauchyProjection> {
    let n = basis.len();
    let n_comp = n + 1;
    let dt = recording.dt;
    let t1 = basis.t1();
    if arrivals.tau0.len() != recording.boundary_nodes.len() || arrivals.dz_tau0.len() != recording.top_nodes.len()
    {
        return Err(Error::GridMismatch("arrivals do not match the recording".into()));
    }
    let check_clean = |pos: usize, tau: f64| -> Result<()> {
        let limit = recording.clean_until[pos];
        if tau + t1 > limit {
            return Err(Error::InvalidConfig(format!(
                "window [{tau}, {}] at boundary node {} overlaps reflections from ∂Ω_f (from t = {limit})",
                tau + t1,
                recording.boundary_nodes[pos]
            )));
        }
        Ok(())
    };

    let mut q0 = Vec::with_capacity(n_comp * recording.boundary_nodes.len());
    for pos in 0..recording.boundary_nodes.len() {
        let tau = arrivals.tau0[pos];
        check_clean(pos, tau)?;
        let p = double_time_integral(recording.trace(pos), dt)?;
        let w = time_shift(&p, dt, tau, t1)?;
        q0.push(tau);
        q0.extend(project_basis(&w, dt, basis));
    }

    // ∂z w(x, t) = ∂z p(x, t + τ) + p_t(x, t + τ) ∂zτ(x), shifted so that it
    // vanishes at t = 0 together with w.
    let mut q1 = Vec::with_capacity(n_comp * recording.top_nodes.len());
    let m = window_len(dt, t1);
    for (pos, &node) in recording.top_nodes.iter().enumerate() {
        let bpos = recording.boundary_position(node).expect("top node recorded");
        let tau = arrivals.tau0[bpos];
        let dz_tau = arrivals.dz_tau0[pos];
        let u = recording.trace(bpos);
        let p_t = cumulative_integral(u, dt);
        let pz = double_time_integral(recording.f1_trace(pos), dt)?;
        check_window(pz.len(), dt, tau, t1)?;
        let at = |j: usize| sample_at(&pz, dt, tau + j as f64 * dt) + sample_at(&p_t, dt, tau + j as f64 * dt) * dz_tau;
        let base = at(0);
        let g: Vec<f64> = (0..m).map(|j| at(j) - base).collect();
        q1.push(dz_tau);
        q1.extend(project_basis(&g, dt, basis));
    }

    let mut out = CauchyProjection {
        omega: recording.omega,
        n_comp,
        boundary_nodes: recording.boundary_nodes.clone(),
        q0,
        top_nodes: recording.top_nodes.clone(),
        q1,
        amplitude_scale: 1.0,
    };
    if normalize_amplitude {
        let mut amps = out.boundary_amplitudes(basis);
        amps.sort_by(|a, b| a.partial_cmp(b).expect("finite amplitudes"));
        let median = amps[amps.len() / 2];
        if !(median > 0.0) {
            return Err(Error::Degenerate(format!("median boundary amplitude is {median}")));
        }
        let scale = 1.0 / median;
        for chunk in out.q0.chunks_mut(n_comp).chain(out.q1.chunks_mut(n_comp)) {
            for v in &mut chunk[1..] {
                *v *= scale;
            }
        }
        out.amplitude_scale = scale;
    }
    Ok(out)
}

/// Picks arrivals and builds the Cauchy data in one go.
pub fn acquire(recording: &BoundaryRecording, cfg: &AcquireConfig) -> Result<(PickedArrivals, CauchyProjection)> {
    let basis = PolyBasis::build(cfg.t1, cfg.n_basis)?;
    let arrivals = pick_all(recording, cfg.pick_threshold)?;
    let data = build_cauchy(recording, &arrivals, &basis, cfg.normalize_amplitude)?;
    Ok((arrivals, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_pulse_is_picked_exactly() {
        let dt = 0.01;
        let peak = 3.0;
        let trace: Vec<f64> = (0..600)
            .map(|k| {
                let t = k as f64 * dt;
                (1.0 - (t - peak).abs() / 0.2).max(0.0)
            })
            .collect();
        assert!((pick_arrival(&trace, dt, 0.5).unwrap() - peak).abs() < 1e-12);
    }

    #[test]
    fn earlier_strong_wave_wins_over_later_maximum() {
        let dt = 0.01;
        let bump = |t: f64, c: f64, a: f64| a * (-((t - c) / 0.05).powi(2)).exp();
        let trace: Vec<f64> = (0..500)
            .map(|k| {
                let t = k as f64 * dt;
                bump(t, 1.0, 0.1) + bump(t, 2.0, 0.8) + bump(t, 3.5, 1.0)
            })
            .collect();
        let t = pick_arrival(&trace, dt, 0.5).unwrap();
        assert!((t - 2.0).abs() < 2e-3, "{t}");
    }

    #[test]
    fn zero_trace_has_no_arrival() {
        assert_eq!(pick_arrival(&[0.0; 10], 0.1, 0.5), Err(Error::NoArrival { node: 0 }));
    }

    #[test]
    fn double_integral_cases() {
        let dt = 0.002;
        let n = 3251;
        let ones = vec![1.0; n];
        let p = double_time_integral(&ones, dt).unwrap();
        for (k, v) in p.iter().enumerate() {
            let t = k as f64 * dt;
            assert!((v - t * t / 2.0).abs() < 1e-9);
        }
        assert!(double_time_integral(&[0.0; 40], dt).unwrap().iter().all(|&v| v == 0.0));
        let s: Vec<f64> = (0..n).map(|k| (k as f64 * dt).sin()).collect();
        let p = double_time_integral(&s, dt).unwrap();
        let worst = p
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let t = k as f64 * dt;
                (v - (t - t.sin())).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-5, "{worst}");
        assert_eq!(double_time_integral(&[1.0], dt), Err(Error::TooFewSamples(1)));
    }

    #[test]
    fn time_shift_cases() {
        let dt = 0.002;
        let p: Vec<f64> = (0..3001).map(|k| k as f64 * dt).collect();
        let w = time_shift(&p, dt, 0.0, 0.1).unwrap();
        assert_eq!(w.len(), 51);
        for (j, v) in w.iter().enumerate() {
            assert!((v - p[j]).abs() < 1e-15);
        }
        let w = time_shift(&p, dt, 2.0, 0.1).unwrap();
        for (j, v) in w.iter().enumerate() {
            assert!((v - j as f64 * dt).abs() < 1e-12);
        }
        assert!(matches!(time_shift(&p, dt, 5.95, 0.1), Err(Error::ShiftOutOfRange { .. })));
    }

    #[test]
    fn projection_cases() {
        let dt = 0.002;
        let b1 = PolyBasis::build(0.1, 1).unwrap();
        let ts: Vec<f64> = (0..51).map(|j| j as f64 * dt).collect();
        assert_eq!(project_basis(&[0.0; 51], dt, &b1), [0.0]);
        let q = project_basis(&ts, dt, &b1);
        assert!((q[0] - 3000f64.sqrt() * 1e-3 / 3.0).abs() < 1e-9);
        assert!((q[0] - 0.018257).abs() < 1e-6);

        let b3 = PolyBasis::build(0.1, 3).unwrap();
        for n in 1..=3 {
            let w: Vec<f64> = ts.iter().map(|&t| b3.eval(n, t)).collect();
            let q = project_basis(&w, dt, &b3);
            for (m, v) in q.iter().enumerate() {
                let expect = if m + 1 == n { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-6, "n={n} m={m} {v}");
            }
        }
    }

    #[test]
    fn cubic_data_is_projected_exactly() {
        let dt = 0.002;
        let b = PolyBasis::build(0.1, 5).unwrap();
        let w: Vec<f64> = (0..51).map(|j| (j as f64 * dt).powi(3)).collect();
        let q = project_basis(&w, dt, &b);
        for (n, v) in q.iter().enumerate() {
            // Exact moments of t^3 against P_n.
            let exact: f64 = b
                .coefficients(n + 1)
                .iter()
                .enumerate()
                .map(|(k, c)| c * 0.1f64.powi(k as i32 + 4) / (k as f64 + 4.0))
                .sum();
            assert!((v - exact).abs() < 1e-12 * (1.0 + exact.abs()), "{n}: {v} vs {exact}");
        }
    }

}
