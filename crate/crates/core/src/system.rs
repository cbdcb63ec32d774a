//! The coupled quasilinear elliptic system for `W = (τ, w_1..w_N)`:
//!
//! ```text
//! r_0 = Δτ - F1,              F1 = -2 Σ_i τ_i Σ_n s_n ∂_i w_n / Σ_n s_n w_n
//! r_m = Δw_m - 2 Σ_i τ_i Σ_n D_mn ∂_i w_n - F1 Σ_n D_mn w_n
//! ```
//!
//! with `s_n = P_n'(0)` and `D_mn = ∫ P_n' P_m`. Node values are taken from
//! 7-point Laplacians and central differences; the residual is defined at
//! interior nodes only.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::basis::PolyBasis;
use crate::grid::{Grid3, VecField};
use crate::{Error, Result};

/// Lower bound `m` on the amplitude `Σ s_n w_n` used when none is given.
pub const DEFAULT_M_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemCoeffs {
    basis: PolyBasis,
    m_floor: f64,
}

/// What to do at a node whose amplitude is below the floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feasibility {
    /// Report an error.
    Strict,
    /// Replace the amplitude by `±m_floor` (sign kept, zero counts as
    /// positive); its derivative is then zero.
    Permissive,
}

impl SystemCoeffs {
    pub fn new(basis: PolyBasis, m_floor: f64) -> Result<Self> {
        if !(m_floor > 0.0 && m_floor.is_finite()) {
            return Err(Error::InvalidConfig(format!("m_floor must be positive, got {m_floor}")));
        }
        if basis.s().iter().all(|&s| s == 0.0) {
            return Err(Error::InvalidBasis("all P_n'(0) vanish".into()));
        }
        Ok(Self { basis, m_floor })
    }

    pub fn basis(&self) -> &PolyBasis {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.basis.len()
    }

    pub fn m_floor(&self) -> f64 {
        self.m_floor
    }
}

/// `S = Σ s_n w_n`; `w` holds `w_1..w_N`.
pub fn amplitude(coeffs: &SystemCoeffs, w: &[f64]) -> f64 {
    coeffs.basis.s().iter().zip(w).map(|(s, v)| s * v).sum()
}

/// `F1` at one node, with the amplitude required to clear the floor.
/// `grad_w[n]` is `∇w_{n+1}`.
pub fn f1(coeffs: &SystemCoeffs, grad_tau: [f64; 3], grad_w: &[[f64; 3]], w: &[f64]) -> Result<f64> {
    let s_amp = amplitude(coeffs, w);
    if !(s_amp >= coeffs.m_floor) {
        return Err(Error::Infeasible { node: 0, amplitude: s_amp, floor: coeffs.m_floor });
    }
    Ok(f1_with(coeffs, grad_tau, grad_w, s_amp))
}

fn f1_with(coeffs: &SystemCoeffs, grad_tau: [f64; 3], grad_w: &[[f64; 3]], s_amp: f64) -> f64 {
    let g: f64 = (0..3)
        .map(|i| grad_tau[i] * coeffs.basis.s().iter().zip(grad_w).map(|(s, gw)| s * gw[i]).sum::<f64>())
        .sum();
    -2.0 * g / s_amp
}

/// The residual of equation `m` (1-based) without its Laplacian term.
pub fn f2_row(coeffs: &SystemCoeffs, m: usize, grad_tau: [f64; 3], grad_w: &[[f64; 3]], w: &[f64], f1_value: f64) -> f64 {
    let n = coeffs.n();
    let d = coeffs.basis.d_matrix();
    let row = &d[(m - 1) * n..m * n];
    let mut acc = 0.0;
    for i in 0..3 {
        let inner: f64 = row.iter().zip(grad_w).map(|(dmn, gw)| dmn * gw[i]).sum();
        acc -= 2.0 * grad_tau[i] * inner;
    }
    let dw: f64 = row.iter().zip(w).map(|(dmn, wv)| dmn * wv).sum();
    acc - f1_value * dw
}

/// Everything the residuals at a node depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInputs {
    /// `Δ` of every component, `τ` first.
    pub lap: Vec<f64>,
    /// `∇` of every component, `τ` first.
    pub grad: Vec<[f64; 3]>,
    /// Values of every component, `τ` first.
    pub val: Vec<f64>,
}

impl NodeInputs {
    pub fn zeros(n_comp: usize) -> Self {
        Self { lap: vec![0.0; n_comp], grad: vec![[0.0; 3]; n_comp], val: vec![0.0; n_comp] }
    }

    /// Gathers the inputs at interior node `(i, j, k)` of `w`.
    pub fn gather(&mut self, w: &VecField, i: usize, j: usize, k: usize) {
        let g = w.grid();
        let p = g.idx(i, j, k);
        let (sy, sz) = (g.dims[0], g.dims[0] * g.dims[1]);
        let inv_h2 = 1.0 / (g.spacing * g.spacing);
        let inv_2h = 0.5 / g.spacing;
        for c in 0..w.n_comp() {
            let u = w.component(c);
            self.val[c] = u[p];
            self.lap[c] = (u[p - 1] + u[p + 1] + u[p - sy] + u[p + sy] + u[p - sz] + u[p + sz] - 6.0 * u[p]) * inv_h2;
            self.grad[c] = [
                (u[p + 1] - u[p - 1]) * inv_2h,
                (u[p + sy] - u[p - sy]) * inv_2h,
                (u[p + sz] - u[p - sz]) * inv_2h,
            ];
        }
    }
}

/// Residuals at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEval {
    pub r: Vec<f64>,
    pub amplitude: f64,
    pub clamped: bool,
}

/// Evaluates the `N + 1` residuals at a node.
pub fn node_residual(coeffs: &SystemCoeffs, x: &NodeInputs, mode: Feasibility, node: usize) -> Result<NodeEval> {
    let n = coeffs.n();
    let (s_amp, clamped) = effective_amplitude(coeffs, &x.val[1..], mode, node)?;
    let grad_tau = x.grad[0];
    let f1v = f1_with(coeffs, grad_tau, &x.grad[1..], s_amp);
    let mut r = Vec::with_capacity(n + 1);
    r.push(x.lap[0] - f1v);
    for m in 1..=n {
        r.push(x.lap[m] + f2_row(coeffs, m, grad_tau, &x.grad[1..], &x.val[1..], f1v));
    }
    Ok(NodeEval { r, amplitude: amplitude(coeffs, &x.val[1..]), clamped })
}

fn effective_amplitude(coeffs: &SystemCoeffs, w: &[f64], mode: Feasibility, node: usize) -> Result<(f64, bool)> {
    let s_amp = amplitude(coeffs, w);
    let m = coeffs.m_floor;
    match mode {
        _ if s_amp >= m => Ok((s_amp, false)),
        Feasibility::Strict => Err(Error::Infeasible { node, amplitude: s_amp, floor: m }),
        Feasibility::Permissive if s_amp.abs() >= m => Ok((s_amp, false)),
        Feasibility::Permissive => Ok((if s_amp < 0.0 { -m } else { m }, true)),
    }
}

/// Adjoint of [`node_residual`]: given weights `a_c`, returns
/// `∂(Σ_c a_c r_c)` with respect to each node input, in the same layout.
pub fn node_residual_adjoint(
    coeffs: &SystemCoeffs,
    x: &NodeInputs,
    a: &[f64],
    mode: Feasibility,
    node: usize,
    out: &mut NodeInputs,
) -> Result<()> {
    let n = coeffs.n();
    let s = coeffs.basis.s();
    let d = coeffs.basis.d_matrix();
    let (s_amp, clamped) = effective_amplitude(coeffs, &x.val[1..], mode, node)?;
    let grad_tau = x.grad[0];
    let grad_w = &x.grad[1..];
    let w = &x.val[1..];
    let f1v = f1_with(coeffs, grad_tau, grad_w, s_amp);

    // Effective weight on F1: r_0 carries -F1, r_m carries -F1 (Dw)_m.
    let mut a_f1 = -a[0];
    for m in 0..n {
        let dw: f64 = (0..n).map(|q| d[m * n + q] * w[q]).sum();
        a_f1 -= a[m + 1] * dw;
    }

    for c in 0..=n {
        out.lap[c] = a[c];
        out.grad[c] = [0.0; 3];
        out.val[c] = 0.0;
    }

    // F1 = -2 G / S with G = Σ_i τ_i Σ_n s_n ∂_i w_n.
    for i in 0..3 {
        let sg: f64 = s.iter().zip(grad_w).map(|(sn, gw)| sn * gw[i]).sum();
        out.grad[0][i] += a_f1 * (-2.0 * sg / s_amp);
        for q in 0..n {
            out.grad[q + 1][i] += a_f1 * (-2.0 * grad_tau[i] * s[q] / s_amp);
        }
    }
    if !clamped {
        for q in 0..n {
            out.val[q + 1] += a_f1 * (-f1v / s_amp) * s[q];
        }
    }

    // The explicit terms of r_m.
    for m in 0..n {
        let am = a[m + 1];
        if am == 0.0 {
            continue;
        }
        for i in 0..3 {
            let inner: f64 = (0..n).map(|q| d[m * n + q] * grad_w[q][i]).sum();
            out.grad[0][i] -= am * 2.0 * inner;
            for q in 0..n {
                out.grad[q + 1][i] -= am * 2.0 * grad_tau[i] * d[m * n + q];
            }
        }
        for q in 0..n {
            out.val[q + 1] -= am * f1v * d[m * n + q];
        }
    }
    Ok(())
}

/// Residual field: component 0 is `Δτ - F1`, components `1..N` the `r_m`;
/// zero on boundary nodes. In strict mode the error names the node with the
/// smallest amplitude.
pub fn residual(w: &VecField, coeffs: &SystemCoeffs, mode: Feasibility) -> Result<VecField> {
    let g: Grid3 = *w.grid();
    let n_comp = coeffs.n() + 1;
    if w.n_comp() != n_comp {
        return Err(Error::GridMismatch(format!("W has {} components, the system {n_comp}", w.n_comp())));
    }
    w.validate()?;
    if mode == Feasibility::Strict {
        if let Some((node, amp)) = worst_amplitude(w, coeffs) {
            if amp < coeffs.m_floor {
                return Err(Error::Infeasible { node, amplitude: amp, floor: coeffs.m_floor });
            }
        }
    }
    let mut out = VecField::zeros(g, n_comp);
    let mut x = NodeInputs::zeros(n_comp);
    let [nx, ny, nz] = g.dims;
    for k in 1..nz - 1 {
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let p = g.idx(i, j, k);
                x.gather(w, i, j, k);
                let e = node_residual(coeffs, &x, mode, p)?;
                for (c, v) in e.r.iter().enumerate() {
                    out.component_mut(c)[p] = *v;
                }
            }
        }
    }
    Ok(out)
}

/// Node (over all of the grid) with the smallest amplitude, and that amplitude.
pub fn worst_amplitude(w: &VecField, coeffs: &SystemCoeffs) -> Option<(usize, f64)> {
    let n = coeffs.n();
    let len = w.grid().len();
    let mut buf = vec![0.0; n];
    let mut best: Option<(usize, f64)> = None;
    for p in 0..len {
        for q in 0..n {
            buf[q] = w.component(q + 1)[p];
        }
        let a = amplitude(coeffs, &buf);
        if best.is_none_or(|(_, b)| a < b) {
            best = Some((p, a));
        }
    }
    best
}
