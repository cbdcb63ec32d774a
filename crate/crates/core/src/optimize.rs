//! Gradient descent on `J` over the free node values, level by level on
//! nested meshes, and the starting point it begins from.
//!
//! Steps are taken along the `L²(Ω)` gradient `∂J/∂W / h³`, whose norm
//! `(Σ g² h³)^{1/2}` is what the stopping rule compares with its tolerance;
//! both are then independent of the mesh.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::acquire::CauchyProjection;
use crate::grid::{interp_refine, Grid3, ScalarField, VecField};
use crate::objective::{DofMap, Functional, Objective};
use crate::system::{amplitude, SystemCoeffs};
use crate::{Error, Result};

/// How the trial step of each backtracking search is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    /// Start every search from the configured step.
    Reset,
    /// Start from twice the last accepted step, capped at the configured one.
    Warm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultilevelPlan {
    /// Mesh spacings, coarse to fine, each half the previous.
    pub levels: Vec<f64>,
    /// Stop a level once `‖∇J‖ <` this.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial trial step `γ`.
    pub step: f64,
    pub max_halvings: usize,
    pub step_policy: StepPolicy,
    /// Push interior amplitudes back up to the floor after every step.
    pub project: bool,
}

impl Default for MultilevelPlan {
    fn default() -> Self {
        Self {
            levels: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
            tol: 2e-2,
            max_iter: 5000,
            step: 0.1,
            max_halvings: 40,
            step_policy: StepPolicy::Reset,
            project: false,
        }
    }
}

impl MultilevelPlan {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidConfig("at least one level is needed".into()));
        }
        for pair in self.levels.windows(2) {
            if ((pair[1] * 2.0 - pair[0]) / pair[0]).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!("level {} is not half of {}", pair[1], pair[0])));
            }
        }
        if !(self.tol > 0.0) || !(self.step > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig("tol, step and max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub level: usize,
    pub iter: usize,
    pub j: f64,
    pub grad_norm: f64,
    /// Step accepted at this iteration (0 on the final, converged record).
    pub step: f64,
    /// Smallest amplitude `Σ s_n w_n` over the nodes.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub h: f64,
    pub iterations: usize,
    pub converged: bool,
    pub j_start: f64,
    pub j_final: f64,
    pub grad_norm_final: f64,
    /// Filled in by callers that own a clock.
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub iterations: Vec<IterRecord>,
    pub levels: Vec<LevelSummary>,
}

/// Hooks into a run: a clock for per-level timing and a per-iteration callback.
pub trait Observer {
    fn now(&mut self) -> Option<f64> {
        None
    }
    fn on_iteration(&mut self, _record: &IterRecord) {}
}

impl Observer for () {}

fn free_norm(g: &VecField, dofs: &DofMap) -> f64 {
    let h = dofs.grid().spacing;
    let h3 = h * h * h;
    let mut acc = 0.0;
    for c in 0..g.n_comp() {
        for (p, v) in g.component(c).iter().enumerate() {
            if dofs.is_free(p) {
                acc += v * v;
            }
        }
    }
    (acc * h3).sqrt()
}

/// Smallest amplitude over all nodes, or `NaN` for a single-component field.
pub fn amplitude_margin(w: &VecField, coeffs: &SystemCoeffs) -> f64 {
    if w.n_comp() < 2 {
        return f64::NAN;
    }
    crate::system::worst_amplitude(w, coeffs).map_or(f64::NAN, |(_, a)| a)
}

/// Raises interior amplitudes below the floor to exactly the floor by the
/// smallest change of `(w_1..w_N)`, i.e. along `s`.
pub fn project_feasible(w: &mut VecField, coeffs: &SystemCoeffs, dofs: &DofMap) -> usize {
    let n = coeffs.n();
    let s = coeffs.basis().s();
    let s2: f64 = s.iter().map(|v| v * v).sum();
    let mut buf = vec![0.0; n];
    let mut changed = 0;
    for p in 0..w.grid().len() {
        if !dofs.is_free(p) {
            continue;
        }
        for q in 0..n {
            buf[q] = w.component(q + 1)[p];
        }
        let a = amplitude(coeffs, &buf);
        if a < coeffs.m_floor() {
            let t = (coeffs.m_floor() - a) / s2;
            for q in 0..n {
                w.component_mut(q + 1)[p] += t * s[q];
            }
            changed += 1;
        }
    }
    changed
}

/// Settings for one level of gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub step: f64,
    pub max_halvings: usize,
    pub step_policy: StepPolicy,
    /// Projection with the system's floor, when wanted.
    pub project: Option<SystemCoeffs>,
    /// Used to report the amplitude margin.
    pub coeffs: Option<SystemCoeffs>,
}

impl LevelSettings {
    pub fn from_plan(plan: &MultilevelPlan, coeffs: &SystemCoeffs) -> Self {
        Self {
            tol: plan.tol,
            max_iter: plan.max_iter,
            step: plan.step,
            max_halvings: plan.max_halvings,
            step_policy: plan.step_policy,
            project: plan.project.then(|| coeffs.clone()),
            coeffs: Some(coeffs.clone()),
        }
    }
}

/// Gradient descent with backtracking from `w0` on one level. Returns the
/// last iterate; `summary.converged` tells whether the tolerance was met
/// within the iteration cap.
pub fn gd_level<F: Functional + ?Sized>(
    f: &F,
    w0: VecField,
    settings: &LevelSettings,
    level: usize,
    trace: &mut RunTrace,
    observer: &mut dyn Observer,
) -> Result<VecField> {
    let dofs = f.dofs();
    let h = dofs.grid().spacing;
    let inv_h3 = 1.0 / (h * h * h);
    let margin = |w: &VecField| settings.coeffs.as_ref().map_or(f64::NAN, |c| amplitude_margin(w, c));
    let started = observer.now();

    let mut w = w0;
    let (mut j, mut grad) = f.value_and_grad(&w)?;
    for v in grad.as_mut_slice() {
        *v *= inv_h3;
    }
    let j_start = j;
    let mut last_step = settings.step;
    let mut iter = 0;
    let mut converged = false;
    loop {
        let gnorm = free_norm(&grad, dofs);
        if gnorm < settings.tol {
            converged = true;
            let rec = IterRecord { level, iter, j, grad_norm: gnorm, step: 0.0, margin: margin(&w) };
            observer.on_iteration(&rec);
            trace.iterations.push(rec);
            break;
        }
        if iter == settings.max_iter {
            let rec = IterRecord { level, iter, j, grad_norm: gnorm, step: 0.0, margin: margin(&w) };
            observer.on_iteration(&rec);
            trace.iterations.push(rec);
            break;
        }
        let mut gamma = match settings.step_policy {
            StepPolicy::Reset => settings.step,
            StepPolicy::Warm => (2.0 * last_step).min(settings.step),
        };
        let mut halvings = 0;
        let (trial, j_trial) = loop {
            let mut trial = w.clone();
            for (t, g) in trial.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *t -= gamma * g;
            }
            if let Some(c) = &settings.project {
                project_feasible(&mut trial, c, dofs);
            }
            // A trial step may leave the region where J is finite.
            let jt = f.value(&trial).ok().filter(|v| v.is_finite());
            if let Some(jt) = jt {
                if jt < j {
                    break (trial, jt);
                }
            }
            halvings += 1;
            if halvings > settings.max_halvings {
                return Err(Error::Stall { iteration: iter, halvings });
            }
            gamma *= 0.5;
        };
        let rec = IterRecord { level, iter, j, grad_norm: gnorm, step: gamma, margin: margin(&w) };
        observer.on_iteration(&rec);
        trace.iterations.push(rec);
        last_step = gamma;
        w = trial;
        let (jn, gn) = f.value_and_grad(&w)?;
        debug_assert!(jn == j_trial);
        j = jn;
        grad = gn;
        for v in grad.as_mut_slice() {
            *v *= inv_h3;
        }
        iter += 1;
    }
    let wall_seconds = match (started, observer.now()) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let last = trace.iterations.last().copied().expect("at least one record");
    trace.levels.push(LevelSummary {
        h,
        iterations: iter,
        converged,
        j_start,
        j_final: j,
        grad_norm_final: last.grad_norm,
        wall_seconds,
    });
    Ok(w)
}

/// Trilinear prolongation of every component onto the refined grid.
pub fn refine_field(w: &VecField, fine: &Grid3) -> Result<VecField> {
    let comps = (0..w.n_comp())
        .map(|c| interp_refine(&w.component_field(c), fine))
        .collect::<Result<Vec<_>>>()?;
    VecField::from_components(&comps)
}

/// Runs [`gd_level`] on each level, prolongating the result to the next and
/// re-imposing that level's Dirichlet data. `objectives[l]` is `J` on level
/// `l`; `w0` lives on the coarsest one.
pub fn multilevel(
    objectives: &[Objective],
    w0: VecField,
    settings: &LevelSettings,
    observer: &mut dyn Observer,
) -> Result<(VecField, RunTrace)> {
    if objectives.is_empty() {
        return Err(Error::InvalidConfig("no levels".into()));
    }
    let mut trace = RunTrace::default();
    let mut w = w0;
    for (level, obj) in objectives.iter().enumerate() {
        if level > 0 {
            let mut fine = refine_field(&w, obj.grid())?;
            obj.dofs().impose(&mut fine, obj.data())?;
            w = fine;
        }
        w = gd_level(obj, w, settings, level, &mut trace, observer)?;
    }
    Ok((w, trace))
}

/// Solves the discrete Laplace equation with the boundary values of `f`
/// held fixed, by conjugate gradients on the interior.
pub fn harmonic_extension(f: &ScalarField) -> Result<ScalarField> {
    let g = *f.grid();
    let [nx, ny, _] = g.dims;
    let (sy, sz) = (nx, nx * ny);
    let interior: Vec<usize> = (0..g.len())
        .filter(|&p| {
            let [i, j, k] = g.ijk(p);
            g.is_interior(i, j, k)
        })
        .collect();
    let mut u = f.values().to_vec();
    for &p in &interior {
        u[p] = 0.0;
    }
    // A = -Δ_h (times h²) restricted to the interior, which is SPD.
    let apply = |x: &[f64], out: &mut [f64]| {
        for &p in &interior {
            out[p] = 6.0 * x[p] - x[p - 1] - x[p + 1] - x[p - sy] - x[p + sy] - x[p - sz] - x[p + sz];
        }
    };
    // b = boundary contributions moved to the right-hand side.
    let mut r = vec![0.0; g.len()];
    apply(&u, &mut r);
    for &p in &interior {
        r[p] = -r[p];
    }
    let mut x = vec![0.0; g.len()];
    let mut d = r.clone();
    let mut ad = vec![0.0; g.len()];
    let dot = |a: &[f64], b: &[f64]| interior.iter().map(|&p| a[p] * b[p]).sum::<f64>();
    let mut rr = dot(&r, &r);
    let target = 1e-28 * rr.max(1e-300);
    let mut iters = 0;
    while rr > target && iters < 10 * interior.len() {
        apply(&d, &mut ad);
        let alpha = rr / dot(&d, &ad);
        for &p in &interior {
            x[p] += alpha * d[p];
            r[p] -= alpha * ad[p];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for &p in &interior {
            d[p] = r[p] + beta * d[p];
        }
        rr = rr_new;
        iters += 1;
    }
    if rr > target && rr > 1e-24 {
        return Err(Error::NonConvergence { residual: rr.sqrt() });
    }
    for &p in &interior {
        u[p] = x[p];
    }
    ScalarField::new(g, u)
}

/// The constant-medium starting point for given Dirichlet data: `τ` is the
/// distance from the source plus the harmonic extension of the data's
/// departure from it on `∂Ω`; every `w_n` is the harmonic extension of its
/// data. The result matches the data on `∂Ω`.
pub fn baseline_start(data: &CauchyProjection, source: [f64; 3]) -> Result<VecField> {
    let g = data.omega;
    let dist = |x: [f64; 3]| ((x[0] - source[0]).powi(2) + (x[1] - source[1]).powi(2) + (x[2] - source[2]).powi(2)).sqrt();
    let mut comps = Vec::with_capacity(data.n_comp);
    for c in 0..data.n_comp {
        let mut boundary = vec![0.0; g.len()];
        for (pos, &node) in data.boundary_nodes.iter().enumerate() {
            let base = if c == 0 { dist(g.coord_of(node)) } else { 0.0 };
            boundary[node] = data.q0_at(pos)[c] - base;
        }
        let ext = harmonic_extension(&ScalarField::new(g, boundary)?)?;
        let values = if c == 0 {
            ext.values().iter().enumerate().map(|(p, v)| v + dist(g.coord_of(p))).collect()
        } else {
            ext.into_values()
        };
        comps.push(ScalarField::new(g, values)?);
    }
    let mut w = VecField::from_components(&comps)?;
    // Exact boundary values, free of the rounding in `base + (q - base)`.
    DofMap::new(g, data.n_comp).impose(&mut w, data)?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid3;

    /// `J = ½ μ Σ_free x² h³`: its L² gradient is `μ x`.
    struct Quadratic {
        dofs: DofMap,
        mu: f64,
    }

    impl Functional for Quadratic {
        fn dofs(&self) -> &DofMap {
            &self.dofs
        }
        fn value(&self, w: &VecField) -> Result<f64> {
            let h3 = self.dofs.grid().spacing.powi(3);
            let s: f64 = (0..w.grid().len()).filter(|&p| self.dofs.is_free(p)).map(|p| w.component(0)[p].powi(2)).sum();
            Ok(0.5 * self.mu * s * h3)
        }
        fn value_and_grad(&self, w: &VecField) -> Result<(f64, VecField)> {
            let h3 = self.dofs.grid().spacing.powi(3);
            let mut g = w.clone();
            for v in g.as_mut_slice() {
                *v *= self.mu * h3;
            }
            self.dofs.zero_fixed(&mut g);
            Ok((self.value(w)?, g))
        }
    }

    fn settings(step: f64, tol: f64) -> LevelSettings {
        LevelSettings {
            tol,
            max_iter: 1000,
            step,
            max_halvings: 40,
            step_policy: StepPolicy::Reset,
            project: None,
            coeffs: None,
        }
    }

    fn toy(mu: f64) -> (Quadratic, VecField) {
        let g = Grid3::omega(1.0, 0.25).unwrap();
        let w = VecField::from_components(&[ScalarField::from_fn(g, |x| x[0] + 2.0 * x[2] + 1.0).unwrap()]).unwrap();
        (Quadratic { dofs: DofMap::new(g, 1), mu }, w)
    }

    #[test]
    fn quadratic_contracts_at_the_textbook_rate() {
        let (f, w) = toy(5.0);
        let mut trace = RunTrace::default();
        gd_level(&f, w, &settings(0.1, 1e-10), 0, &mut trace, &mut ()).unwrap();
        // γμ = 1/2 is accepted at once; each step halves the gradient.
        for pair in trace.iterations.windows(2) {
            let ratio = pair[1].grad_norm / pair[0].grad_norm;
            assert!((ratio - 0.5).abs() < 1e-12, "{ratio}");
            assert!((pair[1].j / pair[0].j - 0.25).abs() < 1e-12);
        }
        assert!(trace.levels[0].converged);
    }

    #[test]
    fn backtracking_halves_an_overlong_step() {
        // γ = 1, μ = 5: |1 - 5| = 4 fails, γ = 1/2 fails (|1-2.5| = 1.5),
        // γ = 1/4 gives |1 - 1.25| = 1/4.
        let (f, w) = toy(5.0);
        let mut trace = RunTrace::default();
        gd_level(&f, w, &settings(1.0, 1e-10), 0, &mut trace, &mut ()).unwrap();
        assert_eq!(trace.iterations[0].step, 0.25);
        let ratio = trace.iterations[1].grad_norm / trace.iterations[0].grad_norm;
        assert!((ratio - 0.25).abs() < 1e-12);
        for pair in trace.iterations.windows(2) {
            assert!(pair[1].j < pair[0].j);
        }
    }

    #[test]
    fn starting_at_the_minimiser_stops_at_once() {
        let g = Grid3::omega(1.0, 0.25).unwrap();
        let f = Quadratic { dofs: DofMap::new(g, 1), mu: 1.0 };
        let w = VecField::zeros(g, 1);
        let mut trace = RunTrace::default();
        let out = gd_level(&f, w.clone(), &settings(0.1, 1e-3), 0, &mut trace, &mut ()).unwrap();
        assert_eq!(out, w);
        assert_eq!(trace.iterations.len(), 1);
        assert_eq!(trace.levels[0].iterations, 0);
    }

    #[test]
    fn stall_is_reported() {
        // A functional that never decreases.
        struct Flat(DofMap);
        impl Functional for Flat {
            fn dofs(&self) -> &DofMap {
                &self.0
            }
            fn value(&self, _: &VecField) -> Result<f64> {
                Ok(1.0)
            }
            fn value_and_grad(&self, w: &VecField) -> Result<(f64, VecField)> {
                let mut g = VecField::zeros(*w.grid(), 1);
                g.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
                self.0.zero_fixed(&mut g);
                Ok((1.0, g))
            }
        }
        let g = Grid3::omega(1.0, 0.25).unwrap();
        let f = Flat(DofMap::new(g, 1));
        let mut trace = RunTrace::default();
        let err = gd_level(&f, VecField::zeros(g, 1), &settings(0.1, 1e-6), 0, &mut trace, &mut ()).unwrap_err();
        assert_eq!(err, Error::Stall { iteration: 0, halvings: 41 });
    }

    #[test]
    fn harmonic_extension_reproduces_harmonic_functions() {
        let g = Grid3::omega(1.0, 0.125).unwrap();
        // x² - z² + 3xy is discretely harmonic as well.
        let exact = ScalarField::from_fn(g, |x| x[0] * x[0] - x[2] * x[2] + 3.0 * x[0] * x[1] + x[1]).unwrap();
        let mut boundary_only = exact.clone();
        for p in 0..g.len() {
            let [i, j, k] = g.ijk(p);
            if g.is_interior(i, j, k) {
                boundary_only.values_mut()[p] = 7.0;
            }
        }
        let ext = harmonic_extension(&boundary_only).unwrap();
        for (a, b) in ext.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn plan_validation() {
        assert!(MultilevelPlan::default().validate().is_ok());
        let bad = MultilevelPlan { levels: vec![0.125, 0.1], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
