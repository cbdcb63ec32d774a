//! Explicit leapfrog solution of `c(x) u_tt = Δu` in a box `Ω_f ⊃ Ω` with
//! `u = 0`, `u_t = δ̃(x - x0)` at `t = 0` and zero Dirichlet data on `∂Ω_f`.
//!
//! The coefficient is supplied on the nodes of `Ω` only; outside `Ω` it is 1.
//! Only the part of the mesh the wave can have reached is updated: the update
//! region grows with the maximal wave speed plus a margin, and everything
//! outside it is still exactly zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::grid::{Grid3, ScalarField};
use crate::{Error, Result};

/// Safety factor applied to the CFL bound.
pub const CFL_SAFETY: f64 = 0.9;

/// Spatial discretisation of `Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stencil {
    /// The 7-point second-order Laplacian.
    Second,
    /// The 13-point fourth-order Laplacian. Next to the Dirichlet walls it
    /// uses the odd reflection `u_{-1} = -u_1`, which keeps the operator
    /// symmetric so the discrete energy is still conserved.
    Fourth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    /// Lower corner of `Ω_f`.
    pub box_lo: [f64; 3],
    /// Upper corner of `Ω_f`.
    pub box_hi: [f64; 3],
    /// Side length `A` of `Ω = (-A/2, A/2)² x (0, A)`.
    pub omega_side: f64,
    pub source: [f64; 3],
    pub eps_moll: f64,
    /// Scale the sampled source so that `Σ δ̃ h³ = 1`.
    pub normalize_source: bool,
    pub dt: f64,
    pub t0: f64,
    pub h: f64,
    pub stencil: Stencil,
    /// Extra distance added to the reachable radius when choosing the update region.
    pub active_margin: f64,
    /// Keep every n-th time level of `u` restricted to `Ω`.
    pub snapshot_every: Option<usize>,
    /// Evaluate the discrete energy every n-th step.
    pub energy_every: Option<usize>,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self::full(1.0 / 32.0)
    }
}

impl ForwardConfig {
    /// `Ω_f = (-6.5, 6.5)² x (-6, 7)`, `x0 = (0, 0, -5)`, `T0 = 6.5`.
    pub fn full(h: f64) -> Self {
        Self {
            box_lo: [-6.5, -6.5, -6.0],
            box_hi: [6.5, 6.5, 7.0],
            omega_side: 1.0,
            source: [0.0, 0.0, -5.0],
            eps_moll: 0.01,
            normalize_source: true,
            dt: 0.002,
            t0: 6.5,
            h,
            stencil: Stencil::Fourth,
            active_margin: 0.5,
            snapshot_every: None,
            energy_every: None,
        }
    }

    /// Small box for quick runs: `Ω_f = (-2, 2)² x (-1.5, 2.5)`, `x0 = (0, 0, -1)`.
    pub fn reduced(h: f64) -> Self {
        Self {
            box_lo: [-2.0, -2.0, -1.5],
            box_hi: [2.0, 2.0, 2.5],
            source: [0.0, 0.0, -1.0],
            t0: 2.5,
            ..Self::full(h)
        }
    }

    pub fn grid(&self) -> Result<Grid3> {
        Grid3::from_box(self.box_lo, self.box_hi, self.h)
    }

    pub fn omega_grid(&self) -> Result<Grid3> {
        Grid3::omega(self.omega_side, self.h)
    }

    pub fn n_steps(&self) -> usize {
        (self.t0 / self.dt).round() as usize
    }

    /// Largest stable time step for coefficient minimum `c_min`.
    pub fn cfl_limit(&self, c_min: f64) -> f64 {
        // Largest eigenvalue of the 1D operator times h²: 4, or 16/3 for
        // the fourth-order stencil.
        let rho = match self.stencil {
            Stencil::Second => 4.0,
            Stencil::Fourth => 16.0 / 3.0,
        };
        CFL_SAFETY * self.h * c_min.min(1.0).sqrt() * 2.0 / (3.0 * rho).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("h", self.h),
            ("dt", self.dt),
            ("t0", self.t0),
            ("eps_moll", self.eps_moll),
            ("omega_side", self.omega_side),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.active_margin >= 0.0) {
            return Err(Error::InvalidConfig("active_margin must be non-negative".into()));
        }
        let a = self.omega_side;
        let olo = [-a / 2.0, -a / 2.0, 0.0];
        let ohi = [a / 2.0, a / 2.0, a];
        for ax in 0..3 {
            if !(self.box_lo[ax] < olo[ax] && ohi[ax] < self.box_hi[ax]) {
                return Err(Error::InvalidConfig("Ω must lie strictly inside Ω_f".into()));
            }
            if !(self.box_lo[ax] < self.source[ax] && self.source[ax] < self.box_hi[ax]) {
                return Err(Error::InvalidConfig("source must lie inside Ω_f".into()));
            }
        }
        let inside_closure = (0..3).all(|ax| olo[ax] <= self.source[ax] && self.source[ax] <= ohi[ax]);
        if inside_closure {
            return Err(Error::InvalidConfig("source must lie outside the closure of Ω".into()));
        }
        if matches!(self.snapshot_every, Some(0)) || matches!(self.energy_every, Some(0)) {
            return Err(Error::InvalidConfig("decimation factors must be positive".into()));
        }
        Ok(())
    }
}

/// The mollified point source
/// `δ̃(x) = exp(-1 / (1 - |x - x0|²/ε)) / ε` for `|x - x0|² < ε`, else 0.
pub fn mollified_delta(x: [f64; 3], x0: [f64; 3], eps: f64) -> f64 {
    let r2 = (x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2) + (x[2] - x0[2]).powi(2);
    if r2 < eps {
        (-1.0 / (1.0 - r2 / eps)).exp() / eps
    } else {
        0.0
    }
}

/// Traces of `u` recorded on `∂Ω`, plus the two layers below the top face that
/// the one-sided `∂z` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecording {
    /// `Ω` meshed at the forward spacing.
    pub omega: Grid3,
    pub source: [f64; 3],
    pub dt: f64,
    /// Samples per trace, at `t = k dt` for `k = 0..n_times`.
    pub n_times: usize,
    /// Indices (into `omega`) of all boundary nodes, ascending.
    pub boundary_nodes: Vec<usize>,
    /// `u` on `boundary_nodes`, node-major.
    pub f0: Vec<f64>,
    /// Indices (into `omega`) of the `Γ0` nodes, ascending.
    pub top_nodes: Vec<usize>,
    /// `∂z u` on `top_nodes` by the one-sided second-order stencil, node-major.
    pub f1: Vec<f64>,
    /// `u` one and two layers below each `top_nodes` entry, node-major.
    pub below: [Vec<f64>; 2],
    /// Earliest time at which a wave reflected off `∂Ω_f` can reach each
    /// boundary node; data after it is contaminated.
    pub clean_until: Vec<f64>,
}

impl BoundaryRecording {
    pub fn duration(&self) -> f64 {
        self.dt * (self.n_times - 1) as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_times).map(move |k| k as f64 * self.dt)
    }

    /// Position of an `omega` node in `boundary_nodes`.
    pub fn boundary_position(&self, node: usize) -> Option<usize> {
        self.boundary_nodes.binary_search(&node).ok()
    }

    pub fn top_position(&self, node: usize) -> Option<usize> {
        self.top_nodes.binary_search(&node).ok()
    }

    /// Trace of `u` at the `pos`-th boundary node.
    pub fn trace(&self, pos: usize) -> &[f64] {
        &self.f0[pos * self.n_times..(pos + 1) * self.n_times]
    }

    /// Trace of `u` at `omega` node `node`, if recorded.
    pub fn trace_at(&self, node: usize) -> Option<&[f64]> {
        self.boundary_position(node).map(|p| self.trace(p))
    }

    pub fn f1_trace(&self, pos: usize) -> &[f64] {
        &self.f1[pos * self.n_times..(pos + 1) * self.n_times]
    }

    /// Trace `layer + 1` nodes below the `pos`-th top node.
    pub fn below_trace(&self, layer: usize, pos: usize) -> &[f64] {
        &self.below[layer][pos * self.n_times..(pos + 1) * self.n_times]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub u: ScalarField,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub recording: BoundaryRecording,
    /// `(k, E^{k+1/2})` pairs when energy tracking was requested.
    pub energy: Vec<(usize, f64)>,
    pub snapshots: Vec<Snapshot>,
}

/// Length of the part of segment `a -> b` inside the box `[lo, hi]`.
fn segment_length_in_box(a: [f64; 3], b: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for ax in 0..3 {
        let d = b[ax] - a[ax];
        if d.abs() < 1e-300 {
            if a[ax] < lo[ax] || a[ax] > hi[ax] {
                return 0.0;
            }
        } else {
            let (mut s0, mut s1) = ((lo[ax] - a[ax]) / d, (hi[ax] - a[ax]) / d);
            if s0 > s1 {
                core::mem::swap(&mut s0, &mut s1);
            }
            t0 = t0.max(s0);
            t1 = t1.min(s1);
        }
    }
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
    (t1 - t0).max(0.0) * len
}

/// Lower bound on the arrival time of the first reflection off `∂Ω_f` at `x`.
/// Outside `Ω` the speed is 1; inside it is at most `v_max`.
fn reflection_time(cfg: &ForwardConfig, x: [f64; 3], v_max: f64) -> f64 {
    let a = cfg.omega_side;
    let olo = [-a / 2.0, -a / 2.0, 0.0];
    let ohi = [a / 2.0, a / 2.0, a];
    let mut best = f64::INFINITY;
    for ax in 0..3 {
        for wall in [cfg.box_lo[ax], cfg.box_hi[ax]] {
            let mut image = cfg.source;
            image[ax] = 2.0 * wall - cfg.source[ax];
            let d = ((x[0] - image[0]).powi(2) + (x[1] - image[1]).powi(2) + (x[2] - image[2]).powi(2))
                .sqrt();
            // The straight image path bounds the length of any reflected path;
            // the part of it inside Ω could be crossed faster.
            let inside = segment_length_in_box(image, x, olo, ohi);
            best = best.min(d - inside + inside / v_max);
        }
    }
    best
}

/// `u` at a node one step outside the interior, with the Dirichlet wall at
/// index 0 (or `n - 1`) and odd reflection beyond it.
#[inline]
fn reflected(u: &[f64], base: usize, stride: usize, idx: isize, n: usize) -> f64 {
    let last = n as isize - 1;
    if idx <= 0 || idx >= last {
        if idx == 0 || idx == last {
            0.0
        } else if idx < 0 {
            -u[base + (-idx) as usize * stride]
        } else {
            -u[base + (2 * last - idx) as usize * stride]
        }
    } else {
        u[base + idx as usize * stride]
    }
}

/// `h² Δ_h u` along row `(j, k)` for `i in i0..=i1`, all interior nodes.
#[allow(clippy::too_many_arguments)]
fn laplacian_row(u: &[f64], dims: [usize; 3], stencil: Stencil, j: usize, k: usize, i0: usize, i1: usize, out: &mut [f64]) {
    let [nx, ny, nz] = dims;
    let sy = nx;
    let sz = nx * ny;
    let row = k * sz + j * sy;
    let len = i1 - i0 + 1;
    match stencil {
        Stencil::Second => {
            let p0 = row + i0;
            let u_c = &u[p0..p0 + len];
            let u_w = &u[p0 - 1..p0 - 1 + len];
            let u_e = &u[p0 + 1..p0 + 1 + len];
            let u_s = &u[p0 - sy..p0 - sy + len];
            let u_n = &u[p0 + sy..p0 + sy + len];
            let u_d = &u[p0 - sz..p0 - sz + len];
            let u_u = &u[p0 + sz..p0 + sz + len];
            for q in 0..len {
                out[q] = u_w[q] + u_e[q] + u_s[q] + u_n[q] + u_d[q] + u_u[q] - 6.0 * u_c[q];
            }
        }
        Stencil::Fourth => {
            const C0: f64 = -30.0 / 12.0;
            const C1: f64 = 16.0 / 12.0;
            const C2: f64 = -1.0 / 12.0;
            let row_fast = j >= 2 && j + 3 <= ny && k >= 2 && k + 3 <= nz;
            let slow = |i: usize| {
                let p = row + i;
                let mut acc = 3.0 * C0 * u[p];
                for (base, stride, at, n) in [(row, 1, i, nx), (k * sz + i, sy, j, ny), (j * sy + i, sz, k, nz)] {
                    let at = at as isize;
                    acc += C1 * (reflected(u, base, stride, at - 1, n) + reflected(u, base, stride, at + 1, n));
                    acc += C2 * (reflected(u, base, stride, at - 2, n) + reflected(u, base, stride, at + 2, n));
                }
                acc
            };
            let (fast_lo, fast_hi) = if row_fast { (i0.max(2), i1.min(nx - 3)) } else { (i1 + 1, i1) };
            if fast_lo > fast_hi {
                for (q, i) in (i0..=i1).enumerate() {
                    out[q] = slow(i);
                }
                return;
            }
            for i in i0..fast_lo {
                out[i - i0] = slow(i);
            }
            for i in fast_hi + 1..=i1 {
                out[i - i0] = slow(i);
            }
            let m = fast_hi - fast_lo + 1;
            let p0 = row + fast_lo;
            let sl = |d: isize| &u[(p0 as isize + d) as usize..(p0 as isize + d) as usize + m];
            let (sy, sz) = (sy as isize, sz as isize);
            let (c, w1, e1, w2, e2) = (sl(0), sl(-1), sl(1), sl(-2), sl(2));
            let (s1, n1, s2, n2) = (sl(-sy), sl(sy), sl(-2 * sy), sl(2 * sy));
            let (d1, u1, d2, u2) = (sl(-sz), sl(sz), sl(-2 * sz), sl(2 * sz));
            let dst = &mut out[fast_lo - i0..fast_lo - i0 + m];
            for q in 0..m {
                dst[q] = 3.0 * C0 * c[q]
                    + C1 * (w1[q] + e1[q] + s1[q] + n1[q] + d1[q] + u1[q])
                    + C2 * (w2[q] + e2[q] + s2[q] + n2[q] + d2[q] + u2[q]);
            }
        }
    }
}

/// Runs the forward problem and records boundary traces on `Ω`.
///
/// `c` lives on `Ω` meshed at the forward spacing (see
/// [`ForwardConfig::omega_grid`]); outside `Ω` the coefficient is 1.
pub fn run_forward(c: &ScalarField, cfg: &ForwardConfig) -> Result<ForwardOutput> {
    run_forward_with_source(c, cfg, 1.0)
}

/// Like [`run_forward`] with the source multiplied by `amplitude`.
pub fn run_forward_with_source(c: &ScalarField, cfg: &ForwardConfig, amplitude: f64) -> Result<ForwardOutput> {
    cfg.validate()?;
    c.validate()?;
    let grid = cfg.grid()?;
    let omega = cfg.omega_grid()?;
    if c.grid() != &omega {
        return Err(Error::GridMismatch("coefficient must be given on Ω at the forward spacing".into()));
    }
    let c_min = c.min();
    if !(c_min > 0.0) {
        return Err(Error::InvalidConfig(format!("coefficient must be positive, min is {c_min}")));
    }
    let limit = cfg.cfl_limit(c_min);
    if cfg.dt > limit {
        return Err(Error::Cfl { dt: cfg.dt, limit });
    }
    let v_max = 1.0 / c_min.min(1.0).sqrt();

    let [nx, ny, nz] = grid.dims;
    let sy = nx;
    let sz = nx * ny;
    let h = grid.spacing;
    let h3 = h * h * h;
    let off = grid.sub_offset(&omega, 1)?;
    let [onx, ony, onz] = omega.dims;

    // dt²/(h² c) inside Ω; outside it is the constant dt²/h².
    let base_coef = cfg.dt * cfg.dt / (h * h);
    let omega_coef: Vec<f64> = c.values().iter().map(|&cv| base_coef / cv).collect();

    // Source, sampled on the nodes within its support.
    let r_src = cfg.eps_moll.sqrt();
    let lo_idx = |x: f64, o: f64| (((x - o) / h).floor() as isize).max(1) as usize;
    let hi_idx = |x: f64, o: f64, n: usize| (((x - o) / h).ceil() as isize).clamp(1, n as isize - 2) as usize;
    let mut source_nodes: Vec<(usize, f64)> = Vec::new();
    for k in lo_idx(cfg.source[2] - r_src, grid.origin[2])..=hi_idx(cfg.source[2] + r_src, grid.origin[2], nz) {
        for j in lo_idx(cfg.source[1] - r_src, grid.origin[1])..=hi_idx(cfg.source[1] + r_src, grid.origin[1], ny) {
            for i in lo_idx(cfg.source[0] - r_src, grid.origin[0])..=hi_idx(cfg.source[0] + r_src, grid.origin[0], nx)
            {
                let v = mollified_delta(grid.coord(i, j, k), cfg.source, cfg.eps_moll);
                if v > 0.0 {
                    source_nodes.push((grid.idx(i, j, k), v));
                }
            }
        }
    }
    if cfg.normalize_source {
        let mass: f64 = source_nodes.iter().map(|&(_, v)| v).sum::<f64>() * h3;
        if mass > 0.0 {
            for (_, v) in &mut source_nodes {
                *v /= mass;
            }
        }
    }

    // Recorded nodes.
    let mut boundary_nodes = Vec::new();
    let mut top_nodes = Vec::new();
    for k in 0..onz {
        for j in 0..ony {
            for i in 0..onx {
                if omega.is_boundary(i, j, k) {
                    boundary_nodes.push(omega.idx(i, j, k));
                }
                if k + 1 == onz && omega.is_interior(i, j, k - 1) {
                    top_nodes.push(omega.idx(i, j, k));
                }
            }
        }
    }
    let to_fwd = |node: usize| {
        let [i, j, k] = omega.ijk(node);
        grid.idx(i + off[0], j + off[1], k + off[2])
    };
    let bnd_fwd: Vec<usize> = boundary_nodes.iter().map(|&n| to_fwd(n)).collect();
    let top_fwd: Vec<usize> = top_nodes.iter().map(|&n| to_fwd(n)).collect();

    let n_steps = cfg.n_steps();
    let n_times = n_steps + 1;
    let mut f0 = vec![0.0; boundary_nodes.len() * n_times];
    let mut below = [vec![0.0; top_nodes.len() * n_times], vec![0.0; top_nodes.len() * n_times]];

    let mut prev = vec![0.0; grid.len()];
    let mut cur = vec![0.0; grid.len()];
    // u^1 = dt δ̃ (Δu^0 = 0 because u^0 = 0).
    for &(p, v) in &source_nodes {
        cur[p] = amplitude * cfg.dt * v;
    }

    let record = |step: usize, u: &[f64], f0: &mut [f64], below: &mut [Vec<f64>; 2]| {
        for (pos, &p) in bnd_fwd.iter().enumerate() {
            f0[pos * n_times + step] = u[p];
        }
        for (pos, &p) in top_fwd.iter().enumerate() {
            below[0][pos * n_times + step] = u[p - sz];
            below[1][pos * n_times + step] = u[p - 2 * sz];
        }
    };
    record(1.min(n_steps), &cur, &mut f0, &mut below);

    let src_idx = [
        ((cfg.source[0] - grid.origin[0]) / h).round() as isize,
        ((cfg.source[1] - grid.origin[1]) / h).round() as isize,
        ((cfg.source[2] - grid.origin[2]) / h).round() as isize,
    ];
    let reach_nodes = |t: f64| -> isize { ((v_max * t + r_src + cfg.active_margin) / h).ceil() as isize + 1 };
    let clamp = |v: isize, n: usize| v.clamp(1, n as isize - 2) as usize;

    let mut energy = Vec::new();
    let mut snapshots = Vec::new();
    let snap = |u: &[f64], step: usize, out: &mut Vec<Snapshot>| {
        let mut vals = Vec::with_capacity(omega.len());
        for k in 0..onz {
            for j in 0..ony {
                for i in 0..onx {
                    vals.push(u[grid.idx(i + off[0], j + off[1], k + off[2])]);
                }
            }
        }
        out.push(Snapshot { step, u: ScalarField::new(omega, vals).expect("finite snapshot") });
    };
    if let Some(every) = cfg.snapshot_every {
        snap(&prev, 0, &mut snapshots);
        if every == 1 && n_steps >= 1 {
            snap(&cur, 1, &mut snapshots);
        }
    }

    let inv_dt2 = 1.0 / (cfg.dt * cfg.dt);
    let mut lap = vec![0.0; nx];
    for step in 1..n_steps {
        // Advance u^step -> u^{step+1}, written over u^{step-1}.
        let r = reach_nodes((step + 1) as f64 * cfg.dt);
        let (i0, i1) = (clamp(src_idx[0] - r, nx), clamp(src_idx[0] + r, nx));
        let (j0, j1) = (clamp(src_idx[1] - r, ny), clamp(src_idx[1] + r, ny));
        let (k0, k1) = (clamp(src_idx[2] - r, nz), clamp(src_idx[2] + r, nz));
        let track_energy = cfg.energy_every.is_some_and(|e| step % e == 0);
        let mut kinetic = 0.0;
        let mut potential = 0.0;

        for k in k0..=k1 {
            let in_omega_k = k >= off[2] && k < off[2] + onz;
            for j in j0..=j1 {
                let row = k * sz + j * sy;
                laplacian_row(&cur, grid.dims, cfg.stencil, j, k, i0, i1, &mut lap);
                let in_omega_row = in_omega_k && j >= off[1] && j < off[1] + ony;
                let (a, b) = if in_omega_row {
                    (off[0].max(i0), (off[0] + onx - 1).min(i1))
                } else {
                    (i1 + 1, i1)
                };
                let segments: [(usize, usize, bool); 3] = if a <= b {
                    [(i0, a.saturating_sub(1), false), (a, b, true), (b + 1, i1, false)]
                } else {
                    [(i0, i1, false), (1, 0, false), (1, 0, false)]
                };
                for (s0, s1, inside) in segments {
                    if s0 > s1 || s1 == 0 {
                        continue;
                    }
                    let len = s1 - s0 + 1;
                    let p0 = row + s0;
                    let u_c = &cur[p0..p0 + len];
                    let lap = &lap[s0 - i0..s0 - i0 + len];
                    let out = &mut prev[p0..p0 + len];
                    if inside {
                        let ob = (k - off[2]) * onx * ony + (j - off[1]) * onx + (s0 - off[0]);
                        let coef = &omega_coef[ob..ob + len];
                        for q in 0..len {
                            let next = 2.0 * u_c[q] - out[q] + coef[q] * lap[q];
                            if track_energy {
                                // c = base_coef / coef
                                let vel = next - u_c[q];
                                kinetic += base_coef / coef[q] * vel * vel;
                                potential -= next * lap[q];
                            }
                            out[q] = next;
                        }
                    } else {
                        for q in 0..len {
                            let next = 2.0 * u_c[q] - out[q] + base_coef * lap[q];
                            if track_energy {
                                let vel = next - u_c[q];
                                kinetic += vel * vel;
                                potential -= next * lap[q];
                            }
                            out[q] = next;
                        }
                    }
                }
            }
        }
        core::mem::swap(&mut prev, &mut cur);
        // cur now holds u^{step+1}.
        record(step + 1, &cur, &mut f0, &mut below);

        if track_energy {
            // E^{k+1/2} = ½ Σ c ((u^{k+1}-u^k)/dt)² h³ + ½ a(u^{k+1}, u^k), with
            // a(u, v) = -Σ u Δ_h v h³; both sums were accumulated above.
            let e = 0.5 * h3 * (kinetic * inv_dt2 + potential / (h * h));
            energy.push((step, e));
        }
        if let Some(every) = cfg.snapshot_every {
            if (step + 1) % every == 0 {
                snap(&cur, step + 1, &mut snapshots);
            }
        }
        let recorded_ok = bnd_fwd.iter().all(|&p| cur[p].is_finite());
        let full_scan = step % 64 == 0 || step + 1 == n_steps;
        if !recorded_ok || (full_scan && cur.iter().any(|v| !v.is_finite())) {
            return Err(Error::ForwardBlowup { step: step + 1 });
        }
    }

    // ∂z u on Γ0 from the top layer and the two below it.
    let mut f1 = vec![0.0; top_nodes.len() * n_times];
    let inv_2h = 0.5 / h;
    for (pos, &node) in top_nodes.iter().enumerate() {
        let bpos = boundary_nodes.binary_search(&node).expect("top node is a boundary node");
        for t in 0..n_times {
            let u0 = f0[bpos * n_times + t];
            let u1 = below[0][pos * n_times + t];
            let u2 = below[1][pos * n_times + t];
            f1[pos * n_times + t] = (3.0 * u0 - 4.0 * u1 + u2) * inv_2h;
        }
    }

    let clean_until = boundary_nodes
        .iter()
        .map(|&n| reflection_time(cfg, omega.coord_of(n), v_max))
        .collect();

    Ok(ForwardOutput {
        recording: BoundaryRecording {
            omega,
            source: cfg.source,
            dt: cfg.dt,
            n_times,
            boundary_nodes,
            f0,
            top_nodes,
            f1,
            below,
            clean_until,
        },
        energy,
        snapshots,
    })
}
