//! The weighted least-squares functional
//!
//! ```text
//! J(W) = Σ_interior |r(W)|² e^{2λ(z+b)²} h³
//!      + σ_N Σ_Γ0 |∂z⁻W - q¹|² e^{2λ(A+b)²} h²
//!      + β Σ_interior Σ_axes |δ²W / h²|² h³
//! ```
//!
//! over the free (interior) node values of `W`, with `W = q⁰` held fixed on
//! `∂Ω`. The gradient is the exact derivative of this discrete sum, built
//! by running every stencil backwards.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::acquire::CauchyProjection;
use crate::grid::{Grid3, VecField};
use crate::system::{node_residual, node_residual_adjoint, Feasibility, NodeInputs, SystemCoeffs};
use crate::{Error, Result};

/// Largest admissible exponent `2λ(z+b)²` is twice this.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub b: f64,
    pub beta: f64,
    /// `σ_N`, the weight of the Neumann mismatch on `Γ0`.
    pub neumann_penalty: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { lambda: 1.0, b: 0.0, beta: 0.0, neumann_penalty: 10.0 }
    }
}

impl ObjectiveConfig {
    /// Checks signs and that the weight stays finite up to `z = a`.
    pub fn validate(&self, a: f64) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("b", self.b), ("beta", self.beta), ("neumann_penalty", self.neumann_penalty)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.lambda * (a + self.b).powi(2) > MAX_EXPONENT {
            return Err(Error::InvalidConfig(format!(
                "λ(A+b)² = {} overflows the weight",
                self.lambda * (a + self.b).powi(2)
            )));
        }
        Ok(())
    }
}

/// `e^{2λ(z+b)²}`.
pub fn carleman_weight(z: f64, cfg: &ObjectiveConfig) -> f64 {
    (2.0 * cfg.lambda * (z + cfg.b).powi(2)).exp()
}

/// Which node values are unknowns: every interior node, all components.
/// Boundary nodes carry the Dirichlet data.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    grid: Grid3,
    n_comp: usize,
    free: Vec<bool>,
}

impl DofMap {
    pub fn new(grid: Grid3, n_comp: usize) -> Self {
        let free = (0..grid.len())
            .map(|p| {
                let [i, j, k] = grid.ijk(p);
                grid.is_interior(i, j, k)
            })
            .collect();
        Self { grid, n_comp, free }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn is_free(&self, node: usize) -> bool {
        self.free[node]
    }

    /// Number of free scalar unknowns.
    pub fn n_free(&self) -> usize {
        self.free.iter().filter(|&&f| f).count() * self.n_comp
    }

    /// Zeroes the fixed entries of a field shaped like `W`.
    pub fn zero_fixed(&self, f: &mut VecField) {
        for c in 0..self.n_comp {
            for (v, &free) in f.component_mut(c).iter_mut().zip(&self.free) {
                if !free {
                    *v = 0.0;
                }
            }
        }
    }

    /// Writes the Dirichlet data into the boundary nodes of `w`.
    pub fn impose(&self, w: &mut VecField, data: &CauchyProjection) -> Result<()> {
        check_shapes(w, data)?;
        for (pos, &node) in data.boundary_nodes.iter().enumerate() {
            for (c, v) in data.q0_at(pos).iter().enumerate() {
                w.component_mut(c)[node] = *v;
            }
        }
        Ok(())
    }

    /// Fails with the first node whose boundary values differ from `q⁰`.
    pub fn check(&self, w: &VecField, data: &CauchyProjection) -> Result<()> {
        check_shapes(w, data)?;
        for (pos, &node) in data.boundary_nodes.iter().enumerate() {
            for (comp, v) in data.q0_at(pos).iter().enumerate() {
                let got = w.component(comp)[node];
                if (got - v).abs() > 1e-12 * (1.0 + v.abs()) {
                    return Err(Error::DirichletMismatch { node, comp });
                }
            }
        }
        Ok(())
    }
}

fn check_shapes(w: &VecField, data: &CauchyProjection) -> Result<()> {
    if w.grid() != &data.omega || w.n_comp() != data.n_comp {
        return Err(Error::GridMismatch("W and the Cauchy data live on different grids".into()));
    }
    Ok(())
}

/// A differentiable functional of the free values of `W`; the optimiser
/// only sees this.
pub trait Functional {
    fn dofs(&self) -> &DofMap;
    fn value(&self, w: &VecField) -> Result<f64>;
    /// Value and `∂J/∂W` at every node (zero at fixed nodes).
    fn value_and_grad(&self, w: &VecField) -> Result<(f64, VecField)>;
}

/// `J` for a given data set on one grid.
#[derive(Debug, Clone)]
pub struct Objective {
    pub cfg: ObjectiveConfig,
    pub coeffs: SystemCoeffs,
    pub mode: Feasibility,
    data: CauchyProjection,
    dofs: DofMap,
    /// `e^{2λ(z+b)²}` per z-layer.
    layer_weight: Vec<f64>,
}

impl Objective {
    pub fn new(cfg: ObjectiveConfig, coeffs: SystemCoeffs, data: CauchyProjection, mode: Feasibility) -> Result<Self> {
        let g = data.omega;
        cfg.validate(g.upper()[2])?;
        if data.n_comp != coeffs.n() + 1 {
            return Err(Error::GridMismatch(format!(
                "data have {} components, the system {}",
                data.n_comp,
                coeffs.n() + 1
            )));
        }
        if g.dims.iter().any(|&d| d < 4) {
            return Err(Error::InvalidGrid("Ω needs at least 4 nodes per axis".into()));
        }
        let layer_weight = (0..g.dims[2]).map(|k| carleman_weight(g.coord(0, 0, k)[2], &cfg)).collect();
        let dofs = DofMap::new(g, data.n_comp);
        Ok(Self { cfg, coeffs, mode, data, dofs, layer_weight })
    }

    pub fn data(&self) -> &CauchyProjection {
        &self.data
    }

    pub fn grid(&self) -> &Grid3 {
        &self.data.omega
    }

    fn check(&self, w: &VecField) -> Result<()> {
        w.validate()?;
        self.dofs.check(w, &self.data)
    }

    /// Evaluates `J`, and accumulates `∂J/∂W` into `grad` when given.
    fn run(&self, w: &VecField, mut grad: Option<&mut VecField>) -> Result<f64> {
        self.check(w)?;
        let g = *self.grid();
        let [nx, ny, nz] = g.dims;
        let (sy, sz) = (nx, nx * ny);
        let h = g.spacing;
        let h3 = h * h * h;
        let inv_h2 = 1.0 / (h * h);
        let inv_2h = 0.5 / h;
        let n_comp = w.n_comp();

        let mut total = 0.0;
        let mut x = NodeInputs::zeros(n_comp);
        let mut adj = NodeInputs::zeros(n_comp);
        let mut a = vec![0.0; n_comp];
        for k in 1..nz - 1 {
            let wk = self.layer_weight[k] * h3;
            for j in 1..ny - 1 {
                for i in 1..nx - 1 {
                    let p = g.idx(i, j, k);
                    x.gather(w, i, j, k);
                    let e = node_residual(&self.coeffs, &x, self.mode, p)?;
                    total += wk * e.r.iter().map(|r| r * r).sum::<f64>();
                    let Some(gr) = grad.as_deref_mut() else { continue };
                    for (ac, r) in a.iter_mut().zip(&e.r) {
                        *ac = 2.0 * wk * r;
                    }
                    node_residual_adjoint(&self.coeffs, &x, &a, self.mode, p, &mut adj)?;
                    for c in 0..n_comp {
                        let out = gr.component_mut(c);
                        let l = adj.lap[c] * inv_h2;
                        out[p] += adj.val[c] - 6.0 * l;
                        out[p - 1] += l - adj.grad[c][0] * inv_2h;
                        out[p + 1] += l + adj.grad[c][0] * inv_2h;
                        out[p - sy] += l - adj.grad[c][1] * inv_2h;
                        out[p + sy] += l + adj.grad[c][1] * inv_2h;
                        out[p - sz] += l - adj.grad[c][2] * inv_2h;
                        out[p + sz] += l + adj.grad[c][2] * inv_2h;
                    }
                }
            }
        }

        if self.cfg.neumann_penalty > 0.0 {
            let scale = self.cfg.neumann_penalty * self.layer_weight[nz - 1] * h * h;
            for (pos, &node) in self.data.top_nodes.iter().enumerate() {
                let q1 = self.data.q1_at(pos);
                for c in 0..n_comp {
                    let u = w.component(c);
                    let d = (3.0 * u[node] - 4.0 * u[node - sz] + u[node - 2 * sz]) * inv_2h - q1[c];
                    total += scale * d * d;
                    if let Some(gr) = grad.as_deref_mut() {
                        let out = gr.component_mut(c);
                        let gd = 2.0 * scale * d * inv_2h;
                        out[node] += 3.0 * gd;
                        out[node - sz] -= 4.0 * gd;
                        out[node - 2 * sz] += gd;
                    }
                }
            }
        }

        if self.cfg.beta > 0.0 {
            let scale = self.cfg.beta * h3 * inv_h2 * inv_h2;
            for c in 0..n_comp {
                let u = w.component(c);
                for k in 1..nz - 1 {
                    for j in 1..ny - 1 {
                        for i in 1..nx - 1 {
                            let p = g.idx(i, j, k);
                            for s in [1, sy, sz] {
                                let d2 = u[p - s] - 2.0 * u[p] + u[p + s];
                                total += scale * d2 * d2;
                                if let Some(gr) = grad.as_deref_mut() {
                                    let out = gr.component_mut(c);
                                    let gd = 2.0 * scale * d2;
                                    out[p - s] += gd;
                                    out[p] -= 2.0 * gd;
                                    out[p + s] += gd;
                                }
                            }
                        }
                    }
                }
            }
        }

        if let Some(gr) = grad {
            self.dofs.zero_fixed(gr);
        }
        Ok(total)
    }
}

impl Functional for Objective {
    fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    fn value(&self, w: &VecField) -> Result<f64> {
        self.run(w, None)
    }

    fn value_and_grad(&self, w: &VecField) -> Result<(f64, VecField)> {
        let mut grad = VecField::zeros(*self.grid(), w.n_comp());
        let v = self.run(w, Some(&mut grad))?;
        Ok((v, grad))
    }
}

/// `J(W)`.
pub fn eval_j(w: &VecField, objective: &Objective) -> Result<f64> {
    objective.value(w)
}

/// `∂J/∂W` on the free nodes, zero on the fixed ones.
pub fn grad_j(w: &VecField, objective: &Objective) -> Result<VecField> {
    objective.value_and_grad(w).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::PolyBasis;
    use crate::grid::ScalarField;
    use crate::rng;
    use crate::system::{residual, DEFAULT_M_FLOOR};
    use rand::Rng as _;

    fn coeffs(n: usize) -> SystemCoeffs {
        SystemCoeffs::new(PolyBasis::build(0.1, n).unwrap(), DEFAULT_M_FLOOR).unwrap()
    }

    /// Data read off `w` itself: `q⁰ = W|∂Ω`, `q¹` = one-sided `∂zW` plus `shift`.
    fn data_from(w: &VecField, shift: f64) -> CauchyProjection {
        let g = *w.grid();
        let n_comp = w.n_comp();
        let mut boundary_nodes = Vec::new();
        let mut q0 = Vec::new();
        let mut top_nodes = Vec::new();
        let mut q1 = Vec::new();
        let sz = g.dims[0] * g.dims[1];
        for p in 0..g.len() {
            let [i, j, k] = g.ijk(p);
            if g.is_boundary(i, j, k) {
                boundary_nodes.push(p);
                for c in 0..n_comp {
                    q0.push(w.component(c)[p]);
                }
                if k + 1 == g.dims[2] && g.is_interior(i, j, k - 1) {
                    top_nodes.push(p);
                    for c in 0..n_comp {
                        let u = w.component(c);
                        q1.push((3.0 * u[p] - 4.0 * u[p - sz] + u[p - 2 * sz]) / (2.0 * g.spacing) + shift);
                    }
                }
            }
        }
        CauchyProjection { omega: g, n_comp, boundary_nodes, q0, top_nodes, q1, amplitude_scale: 1.0 }
    }

    fn smooth_w(g: Grid3, seed: u64) -> VecField {
        let mut r = rng::seeded(seed);
        let mut comps = Vec::new();
        let a: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
        comps.push(
            ScalarField::from_fn(g, |x| {
                (x[0] * x[0] + x[1] * x[1] + (x[2] + 5.0).powi(2)).sqrt() + 0.05 * a[0] * (3.0 * x[0] + 2.0 * x[2]).sin()
            })
            .unwrap(),
        );
        comps.push(ScalarField::from_fn(g, |x| 0.02 + 0.002 * (a[1] * x[0] + a[2] * x[1] * x[2]).cos()).unwrap());
        comps.push(ScalarField::from_fn(g, |x| 0.001 * (a[3] + a[4] * x[2] + a[5] * x[0] * x[1])).unwrap());
        comps.push(ScalarField::from_fn(g, |x| 0.0005 * (a[6] * x[2] * x[2] + a[7] * x[1])).unwrap());
        VecField::from_components(&comps).unwrap()
    }

    #[test]
    fn weight_values() {
        let cfg = ObjectiveConfig::default();
        assert_eq!(carleman_weight(0.0, &cfg), 1.0);
        assert!((carleman_weight(1.0, &cfg) - 2f64.exp()).abs() < 1e-12);
        let flat = ObjectiveConfig { lambda: 0.0, ..cfg.clone() };
        assert_eq!(carleman_weight(0.7, &flat), 1.0);
        assert!(ObjectiveConfig { lambda: 800.0, ..cfg.clone() }.validate(1.0).is_err());
        assert!(ObjectiveConfig { beta: -1.0, ..cfg }.validate(1.0).is_err());
    }

    #[test]
    fn dof_map_fixes_the_boundary() {
        let g = Grid3::omega(1.0, 0.25).unwrap();
        let d = DofMap::new(g, 4);
        assert_eq!(d.n_free(), 27 * 4);
        assert!(!d.is_free(0));
        assert!(d.is_free(g.idx(2, 2, 2)));
    }

    #[test]
    fn unweighted_value_matches_plain_residual_norm() {
        let g = Grid3::omega(1.0, 0.125).unwrap();
        let w = smooth_w(g, 1);
        let cfg = ObjectiveConfig { lambda: 0.0, b: 0.0, beta: 0.0, neumann_penalty: 0.0 };
        let obj = Objective::new(cfg, coeffs(3), data_from(&w, 0.0), Feasibility::Strict).unwrap();
        let r = residual(&w, &coeffs(3), Feasibility::Strict).unwrap();
        let naive: f64 = r.as_slice().iter().map(|v| v * v).sum::<f64>() * 0.125f64.powi(3);
        let j = eval_j(&w, &obj).unwrap();
        assert!(j > 0.0);
        assert!((j - naive).abs() <= 1e-12 * naive, "{j} vs {naive}");
    }

    #[test]
    fn constant_residual_gives_volume() {
        // τ = R0 z²/2 with constant amplitudes: r_0 = R0, r_m = 0.
        let g = Grid3::omega(1.0, 0.125).unwrap();
        let r0 = 0.7;
        let w = VecField::from_components(&[
            ScalarField::from_fn(g, |x| 0.5 * r0 * x[2] * x[2]).unwrap(),
            ScalarField::constant(g, 1.0),
        ])
        .unwrap();
        let cfg = ObjectiveConfig { lambda: 0.0, b: 0.0, beta: 0.0, neumann_penalty: 0.0 };
        let obj = Objective::new(cfg, coeffs(1), data_from(&w, 0.0), Feasibility::Strict).unwrap();
        let expect = r0 * r0 * g.interior_len() as f64 * 0.125f64.powi(3);
        assert!((eval_j(&w, &obj).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_mismatch_is_rejected() {
        let g = Grid3::omega(1.0, 0.25).unwrap();
        let w = smooth_w(g, 2);
        let obj = Objective::new(ObjectiveConfig::default(), coeffs(3), data_from(&w, 0.0), Feasibility::Strict).unwrap();
        let mut bad = w.clone();
        bad.component_mut(2)[0] += 1.0;
        assert_eq!(eval_j(&bad, &obj), Err(Error::DirichletMismatch { node: 0, comp: 2 }));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let g = Grid3::omega(1.0, 0.125).unwrap();
        let w = smooth_w(g, 3);
        for cfg in [
            ObjectiveConfig::default(),
            ObjectiveConfig { lambda: 2.0, b: 0.1, beta: 0.01, neumann_penalty: 3.0 },
        ] {
            let obj = Objective::new(cfg, coeffs(3), data_from(&w, 0.05), Feasibility::Strict).unwrap();
            let grad = grad_j(&w, &obj).unwrap();
            let mut r = rng::seeded(11);
            let free: Vec<usize> = (0..g.len()).filter(|&p| obj.dofs().is_free(p)).collect();
            for _ in 0..20 {
                let p = free[r.gen_range(0..free.len())];
                let c = r.gen_range(0..4);
                let step = 1e-5 * (1.0 + w.component(c)[p].abs()) * if c == 0 { 1.0 } else { 0.01 };
                let mut plus = w.clone();
                plus.component_mut(c)[p] += step;
                let mut minus = w.clone();
                minus.component_mut(c)[p] -= step;
                let fd = (eval_j(&plus, &obj).unwrap() - eval_j(&minus, &obj).unwrap()) / (2.0 * step);
                let got = grad.component(c)[p];
                let rel = (got - fd).abs() / got.abs().max(fd.abs());
                assert!(rel < 1e-5, "comp {c} node {p}: {got} vs {fd}");
            }
            for p in (0..g.len()).filter(|&p| !obj.dofs().is_free(p)) {
                for c in 0..4 {
                    assert_eq!(grad.component(c)[p], 0.0);
                }
            }
        }
    }

    #[test]
    fn exact_solution_is_stationary() {
        // τ affine, amplitudes constant: every residual vanishes, the data
        // are exact, so J = 0 and ∇J = 0.
        let g = Grid3::omega(1.0, 0.125).unwrap();
        let w = VecField::from_components(&[
            ScalarField::from_fn(g, |x| 5.0 + x[2] + 0.1 * x[0]).unwrap(),
            ScalarField::constant(g, 0.3),
            ScalarField::constant(g, -0.01),
        ])
        .unwrap();
        let obj = Objective::new(ObjectiveConfig::default(), coeffs(2), data_from(&w, 0.0), Feasibility::Strict).unwrap();
        let (j, grad) = obj.value_and_grad(&w).unwrap();
        assert!(j < 1e-24);
        assert!(grad.as_slice().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn larger_lambda_emphasises_deep_residuals() {
        // A residual bump near z = 0.9 on an exact solution: the gradient
        // grows like the weight there, e^{2λ·0.81}.
        let g = Grid3::omega(1.0, 0.125).unwrap();
        let base = VecField::from_components(&[
            ScalarField::from_fn(g, |x| 5.0 + x[2]).unwrap(),
            ScalarField::constant(g, 0.3),
        ])
        .unwrap();
        let mut w = base.clone();
        w.component_mut(0)[g.idx(4, 4, 7)] += 1e-3;
        let norm_at = |lambda: f64| {
            let cfg = ObjectiveConfig { lambda, neumann_penalty: 0.0, ..Default::default() };
            let obj = Objective::new(cfg, coeffs(1), data_from(&base, 0.0), Feasibility::Strict).unwrap();
            grad_j(&w, &obj).unwrap().as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let (n1, n2, n4) = (norm_at(1.0), norm_at(2.0), norm_at(4.0));
        assert!(n1 < n2 && n2 < n4);
        let ratio = n2 / n1;
        assert!(ratio > (2.0 * 0.75f64.powi(2)).exp() && ratio < (2.0 * 0.875f64.powi(2)).exp() * 1.01);
    }
}
