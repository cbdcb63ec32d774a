//! Travel times `|∇τ|² = c`, `τ(x0) = 0`, by first-order Godunov fast sweeping.
//!
//! This is an independent oracle for the picked arrivals: it knows nothing
//! about the wave equation, only the coefficient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::grid::{Grid3, ScalarField};
use crate::{Error, Result};

/// Sweep cycles (eight orderings each) before giving up.
pub const MAX_CYCLES: usize = 100;
/// Convergence threshold on the largest update of a cycle.
pub const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeField {
    pub tau: ScalarField,
    pub source: [f64; 3],
    /// Sweep cycles used.
    pub cycles: usize,
}

impl TravelTimeField {
    pub fn grid(&self) -> &Grid3 {
        self.tau.grid()
    }
}

/// Solves the one-node Godunov upwind equation
/// `Σ max(τ - a_i, 0)² = f²` given the smallest neighbour value per axis.
fn godunov(mut a: [f64; 3], f: f64) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).expect("travel times are never NaN"));
    let [a0, a1, a2] = a;
    let t = a0 + f;
    if t <= a1 {
        return t;
    }
    let d = 2.0 * f * f - (a0 - a1) * (a0 - a1);
    let t = 0.5 * (a0 + a1 + d.max(0.0).sqrt());
    if t <= a2 {
        return t;
    }
    let s = a0 + a1 + a2;
    let q = s * s - 3.0 * (a0 * a0 + a1 * a1 + a2 * a2 - f * f);
    (s + q.max(0.0).sqrt()) / 3.0
}

/// Travel time from `x0` through the medium `c` (one value per node of the
/// grid the result lives on).
///
/// Nodes within `2h` of the source are initialised with the straight-ray
/// time in the constant medium `c(x0)`, then sweeps in the eight axis
/// orderings run until the largest update is below [`TOLERANCE`].
pub fn fast_sweep(c: &ScalarField, x0: [f64; 3]) -> Result<TravelTimeField> {
    c.validate()?;
    let g = *c.grid();
    let c_min = c.min();
    if !(c_min > 0.0) {
        return Err(Error::InvalidConfig(format!("coefficient must be positive, min is {c_min}")));
    }
    let [nx, ny, nz] = g.dims;
    let h = g.spacing;
    let lo = g.origin;
    let hi = g.upper();
    if (0..3).any(|a| x0[a] < lo[a] || x0[a] > hi[a]) {
        return Err(Error::InvalidConfig("source must lie inside the eikonal grid".into()));
    }

    // Slowness times h at each node.
    let f: Vec<f64> = c.values().iter().map(|&v| v.sqrt() * h).collect();
    let nearest = [0, 1, 2].map(|a| (((x0[a] - lo[a]) / h).round() as usize).min(g.dims[a] - 1));
    let c0 = c.at(nearest[0], nearest[1], nearest[2]);

    let mut tau = vec![f64::INFINITY; g.len()];
    let mut frozen = vec![false; g.len()];
    let reach = 2.0 * h;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let x = g.coord(i, j, k);
                let r = ((x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2) + (x[2] - x0[2]).powi(2)).sqrt();
                if r <= reach + 1e-12 * h {
                    let p = g.idx(i, j, k);
                    tau[p] = c0.sqrt() * r;
                    frozen[p] = true;
                }
            }
        }
    }

    let tau = run_sweeps(tau, &frozen, &f, g.dims)?;
    Ok(TravelTimeField { tau: ScalarField::new(g, tau.0)?, source: x0, cycles: tau.1 })
}

/// Fast sweeping from given initial values: nodes with `frozen` set keep
/// their value of `initial` and act as the source; all others start from
/// infinity. `source` is only recorded in the result.
pub fn fast_sweep_seeded(c: &ScalarField, initial: &ScalarField, frozen: &[bool], source: [f64; 3]) -> Result<TravelTimeField> {
    c.validate()?;
    let g = *c.grid();
    if initial.grid() != &g || frozen.len() != g.len() {
        return Err(Error::GridMismatch("seed must live on the coefficient grid".into()));
    }
    let c_min = c.min();
    if !(c_min > 0.0) {
        return Err(Error::InvalidConfig(format!("coefficient must be positive, min is {c_min}")));
    }
    if !frozen.iter().any(|&b| b) {
        return Err(Error::InvalidConfig("no seeded nodes".into()));
    }
    let h = g.spacing;
    let f: Vec<f64> = c.values().iter().map(|&v| v.sqrt() * h).collect();
    let tau = initial.values().iter().zip(frozen).map(|(&v, &fz)| if fz { v } else { f64::INFINITY }).collect();
    let tau = run_sweeps(tau, frozen, &f, g.dims)?;
    Ok(TravelTimeField { tau: ScalarField::new(g, tau.0)?, source, cycles: tau.1 })
}

fn run_sweeps(mut tau: Vec<f64>, frozen: &[bool], f: &[f64], dims: [usize; 3]) -> Result<(Vec<f64>, usize)> {
    let (sy, sz) = (dims[0], dims[0] * dims[1]);
    let mut cycles = 0;
    loop {
        if cycles == MAX_CYCLES {
            // Residual: the largest update of one more cycle.
            let residual = sweep_cycle(&mut tau, frozen, f, dims, sy, sz);
            return Err(Error::NonConvergence { residual });
        }
        cycles += 1;
        let change = sweep_cycle(&mut tau, frozen, f, dims, sy, sz);
        if change < TOLERANCE {
            break;
        }
    }
    Ok((tau, cycles))
}

fn sweep_cycle(tau: &mut [f64], frozen: &[bool], f: &[f64], dims: [usize; 3], sy: usize, sz: usize) -> f64 {
    let [nx, ny, nz] = dims;
    let mut change: f64 = 0.0;
    for order in 0..8u8 {
        let fwd = [order & 1 == 0, order & 2 == 0, order & 4 == 0];
        for kk in 0..nz {
            let k = if fwd[2] { kk } else { nz - 1 - kk };
            for jj in 0..ny {
                let j = if fwd[1] { jj } else { ny - 1 - jj };
                for ii in 0..nx {
                    let i = if fwd[0] { ii } else { nx - 1 - ii };
                    let p = i + sy * j + sz * k;
                    if frozen[p] {
                        continue;
                    }
                    let axis_min = |at: usize, n: usize, stride: usize| {
                        let mut m = f64::INFINITY;
                        if at > 0 {
                            m = m.min(tau[p - stride]);
                        }
                        if at + 1 < n {
                            m = m.min(tau[p + stride]);
                        }
                        m
                    };
                    let a = [axis_min(i, nx, 1), axis_min(j, ny, sy), axis_min(k, nz, sz)];
                    if a.iter().all(|v| v.is_infinite()) {
                        continue;
                    }
                    // Infinite neighbours drop out of the upwind sum.
                    let finite_max = a.iter().copied().filter(|v| v.is_finite()).fold(f64::MIN, f64::max);
                    let big = finite_max + 2.0 * f[p] + 1.0;
                    let a = a.map(|v| if v.is_finite() { v } else { big });
                    let t = godunov(a, f[p]);
                    if t < tau[p] {
                        let old = tau[p];
                        tau[p] = t;
                        change = change.max(if old.is_finite() { old - t } else { f64::INFINITY });
                    }
                }
            }
        }
    }
    change
}

#[cfg(test)]
mod tests {
    use super::*;

    fn distance(x: [f64; 3], x0: [f64; 3]) -> f64 {
        ((x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2) + (x[2] - x0[2]).powi(2)).sqrt()
    }

    #[test]
    fn godunov_one_and_two_sided() {
        assert_eq!(godunov([0.0, 10.0, 10.0], 1.0), 1.0);
        // Two equal neighbours: τ = a + f/√2.
        let t = godunov([0.0, 0.0, 10.0], 1.0);
        assert!((t - 0.5f64.sqrt()).abs() < 1e-15);
        let t = godunov([0.0, 0.0, 0.0], 1.0);
        assert!((t - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_speed_on_full_box() {
        let h = 0.25;
        let g = Grid3::from_box([-6.5, -6.5, -6.0], [6.5, 6.5, 7.0], h).unwrap();
        let x0 = [0.0, 0.0, -5.0];
        for (cv, scale) in [(1.0, 1.0), (4.0, 2.0)] {
            let tt = fast_sweep(&ScalarField::constant(g, cv), x0).unwrap();
            let mut worst: f64 = 0.0;
            for (p, v) in tt.tau.values().iter().enumerate() {
                assert!(*v >= 0.0);
                worst = worst.max((v - scale * distance(g.coord_of(p), x0)).abs());
            }
            assert!(worst < 3.0 * h * scale, "c={cv}: {worst}");
        }
    }

    #[test]
    fn causal_along_axis() {
        let g = Grid3::from_box([-2.0, -2.0, -2.0], [2.0, 2.0, 2.0], 0.125).unwrap();
        let tt = fast_sweep(&ScalarField::constant(g, 1.0), [0.0, 0.0, -1.0]).unwrap();
        let (i, j) = (16, 16);
        for k in 9..g.dims[2] - 1 {
            assert!(tt.tau.at(i, j, k + 1) > tt.tau.at(i, j, k));
        }
    }

    #[test]
    fn slow_ball_delays_axis_by_chord() {
        // Ball of c = 2 (slowness √2), radius 0.2, on the source axis. At axis
        // points inside the ball every path has to cross the slow medium and
        // the delay is (√2 - 1) times the chord travelled in the ball. Beyond
        // the ball the first arrival diffracts around it, so the straight-ray
        // delay no longer applies there.
        let h = 1.0 / 32.0;
        let g = Grid3::from_box([-1.0, -1.0, -1.0], [1.0, 1.0, 1.5], h).unwrap();
        let x0 = [0.0, 0.0, -0.75];
        let centre = [0.0, 0.0, 0.5];
        let ball = ScalarField::from_fn(g, |x| if distance(x, centre) < 0.2 { 2.0 } else { 1.0 }).unwrap();
        let with = fast_sweep(&ball, x0).unwrap();
        let without = fast_sweep(&ScalarField::constant(g, 1.0), x0).unwrap();
        for (k, chord) in [(48, 0.2), (50, 0.2625)] {
            let delay = with.tau.at(32, 32, k) - without.tau.at(32, 32, k);
            let expect = (2f64.sqrt() - 1.0) * chord;
            assert!(((delay - expect) / expect).abs() < 0.1, "k={k}: {delay} vs {expect}");
        }
        let k = g.dims[2] - 1;
        let behind = with.tau.at(32, 32, k) - without.tau.at(32, 32, k);
        assert!(behind > 0.0 && behind < (2f64.sqrt() - 1.0) * 0.4);
    }

    #[test]
    fn seeded_plane_wave_is_exact() {
        // τ = z frozen on the bottom layer propagates exactly along the axis.
        let g = Grid3::from_box([0.0; 3], [1.0; 3], 0.125).unwrap();
        let init = ScalarField::from_fn(g, |x| x[2]).unwrap();
        let frozen: Vec<bool> = (0..g.len()).map(|p| g.ijk(p)[2] == 0).collect();
        let tt = fast_sweep_seeded(&ScalarField::constant(g, 1.0), &init, &frozen, [0.5, 0.5, -1.0]).unwrap();
        for (a, b) in tt.tau.values().iter().zip(init.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(fast_sweep_seeded(&ScalarField::constant(g, 1.0), &init, &vec![false; g.len()], [0.0; 3]).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let g = Grid3::from_box([0.0; 3], [1.0; 3], 0.25).unwrap();
        assert!(fast_sweep(&ScalarField::constant(g, 0.0), [0.5; 3]).is_err());
        assert!(fast_sweep(&ScalarField::constant(g, 1.0), [2.0, 0.5, 0.5]).is_err());
    }
}
