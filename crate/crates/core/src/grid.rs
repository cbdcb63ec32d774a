//! Uniform Cartesian meshes, node-indexed fields and the finite-difference
//! operators shared by every other module.
//!
//! Fields are stored row-major with `x` fastest: node `(i, j, k)` lives at
//! `i + nx * (j + ny * k)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A uniform mesh with spacing `h` and `dims` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl Grid3 {
    pub fn new(origin: [f64; 3], spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        if dims.iter().any(|&n| n < 3) {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes per axis, got {dims:?}")));
        }
        if origin.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid(format!("origin must be finite, got {origin:?}")));
        }
        Ok(Self { origin, spacing, dims })
    }

    /// Grid covering the box `[lo, hi]` with spacing `h`. The extents must be
    /// integer multiples of `h` (up to 1e-9 relative).
    pub fn from_box(lo: [f64; 3], hi: [f64; 3], h: f64) -> Result<Self> {
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let cells = (hi[a] - lo[a]) / h;
            let rounded = cells.round();
            if rounded < 2.0 || (cells - rounded).abs() > 1e-9 * rounded.max(1.0) {
                return Err(Error::InvalidGrid(format!(
                    "extent {} on axis {a} is not a multiple of h = {h}",
                    hi[a] - lo[a]
                )));
            }
            dims[a] = rounded as usize + 1;
        }
        Self::new(lo, h, dims)
    }

    /// The inversion domain `(-A/2, A/2)^2 x (0, A)` meshed with spacing `h`.
    pub fn omega(side: f64, h: f64) -> Result<Self> {
        Self::from_box([-side / 2.0, -side / 2.0, 0.0], [side / 2.0, side / 2.0, side], h)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Node coordinate, computed by multiplication so there is no drift.
    #[inline]
    pub fn coord(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + self.spacing * i as f64,
            self.origin[1] + self.spacing * j as f64,
            self.origin[2] + self.spacing * k as f64,
        ]
    }

    pub fn coord_of(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.ijk(idx);
        self.coord(i, j, k)
    }

    /// Upper corner of the box.
    pub fn upper(&self) -> [f64; 3] {
        self.coord(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize, k: usize) -> bool {
        i == 0
            || j == 0
            || k == 0
            || i + 1 == self.dims[0]
            || j + 1 == self.dims[1]
            || k + 1 == self.dims[2]
    }

    pub fn is_interior(&self, i: usize, j: usize, k: usize) -> bool {
        !self.is_boundary(i, j, k)
    }

    /// Number of interior nodes.
    pub fn interior_len(&self) -> usize {
        (self.dims[0] - 2) * (self.dims[1] - 2) * (self.dims[2] - 2)
    }

    /// Classification of a node into interior, the top face `Γ0` or the rest
    /// of the boundary `Γ1`. Rim nodes of the top face belong to `Γ1`.
    pub fn node_class(&self, i: usize, j: usize, k: usize) -> NodeClass {
        let [nx, ny, nz] = self.dims;
        if !self.is_boundary(i, j, k) {
            NodeClass::Interior
        } else if k + 1 == nz && i > 0 && j > 0 && i + 1 < nx && j + 1 < ny {
            NodeClass::Gamma0
        } else {
            NodeClass::Gamma1
        }
    }

    /// The 2x nested refinement: spacing `h/2`, same origin and extent.
    pub fn refined(&self) -> Grid3 {
        Grid3 {
            origin: self.origin,
            spacing: self.spacing / 2.0,
            dims: [2 * self.dims[0] - 1, 2 * self.dims[1] - 1, 2 * self.dims[2] - 1],
        }
    }

    /// Whether `fine` is the 2x nested refinement of `self`.
    pub fn is_refined_by(&self, fine: &Grid3) -> bool {
        let r = self.refined();
        r.dims == fine.dims
            && (r.spacing - fine.spacing).abs() <= 1e-12 * r.spacing
            && (0..3).all(|a| (r.origin[a] - fine.origin[a]).abs() <= 1e-12 * (1.0 + r.origin[a].abs()))
    }

    /// Index offset of the node of `self` that coincides with `other`'s origin,
    /// when `other` is a sub-box of `self` on the same lattice with spacing
    /// `stride * self.spacing`.
    pub fn sub_offset(&self, other: &Grid3, stride: usize) -> Result<[usize; 3]> {
        let tol = 1e-9 * self.spacing;
        if (other.spacing - self.spacing * stride as f64).abs() > tol {
            return Err(Error::GridMismatch(format!(
                "spacing {} is not {stride} x {}",
                other.spacing, self.spacing
            )));
        }
        let mut off = [0usize; 3];
        for a in 0..3 {
            let s = (other.origin[a] - self.origin[a]) / self.spacing;
            let r = s.round();
            if r < 0.0 || (s - r).abs() > 1e-6 {
                return Err(Error::GridMismatch(format!("origin of sub-grid is off-lattice on axis {a}")));
            }
            off[a] = r as usize;
            if off[a] + (other.dims[a] - 1) * stride >= self.dims[a] {
                return Err(Error::GridMismatch(format!("sub-grid leaves the host grid on axis {a}")));
            }
        }
        Ok(off)
    }
}

/// Boundary classification used for Dirichlet and Neumann data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeClass {
    Interior,
    /// Top face `z = A` without its rim.
    Gamma0,
    /// All other boundary nodes.
    Gamma1,
}

/// Per-node classification of a grid.
#[derive(Debug, Clone)]
pub struct BoundaryMask {
    pub grid: Grid3,
    pub classes: Vec<NodeClass>,
}

impl BoundaryMask {
    pub fn new(grid: Grid3) -> Self {
        let mut classes = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    classes.push(grid.node_class(i, j, k));
                }
            }
        }
        Self { grid, classes }
    }

    pub fn count(&self, class: NodeClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }
}

/// Reject NaN and infinities, reporting the first offending index.
pub fn ensure_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Real values on the nodes of a [`Grid3`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid3,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        ensure_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid3) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid3, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: Grid3, mut f: impl FnMut([f64; 3]) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    values.push(f(grid.coord(i, j, k)));
                }
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access. Callers are responsible for keeping values finite;
    /// [`ScalarField::validate`] re-checks.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&self.values)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.idx(i, j, k)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// The unknown `W = (τ, w_1, ..., w_N)`: `n_comp` scalar components on one
/// grid, stored component-major. Component 0 is always the travel time.
#[derive(Debug, Clone, PartialEq)]
pub struct VecField {
    grid: Grid3,
    n_comp: usize,
    data: Vec<f64>,
}

impl VecField {
    pub fn zeros(grid: Grid3, n_comp: usize) -> Self {
        assert!(n_comp > 0, "a vector field needs at least one component");
        Self { grid, n_comp, data: vec![0.0; n_comp * grid.len()] }
    }

    pub fn from_components(components: &[ScalarField]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidConfig("vector field without components".into()))?;
        let grid = *first.grid();
        let mut data = Vec::with_capacity(components.len() * grid.len());
        for c in components {
            if c.grid() != &grid {
                return Err(Error::GridMismatch("components live on different grids".into()));
            }
            data.extend_from_slice(c.values());
        }
        Ok(Self { grid, n_comp: components.len(), data })
    }

    pub fn from_raw(grid: Grid3, n_comp: usize, data: Vec<f64>) -> Result<Self> {
        if n_comp == 0 || data.len() != n_comp * grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {n_comp} components on {} nodes",
                data.len(),
                grid.len()
            )));
        }
        ensure_finite(&data)?;
        Ok(Self { grid, n_comp, data })
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn component_field(&self, c: usize) -> ScalarField {
        ScalarField { grid: self.grid, values: self.component(c).to_vec() }
    }

    pub fn set_component(&mut self, c: usize, field: &ScalarField) -> Result<()> {
        if field.grid() != &self.grid {
            return Err(Error::GridMismatch("component grid differs".into()));
        }
        self.component_mut(c).copy_from_slice(field.values());
        Ok(())
    }

    /// Values of all components at one node.
    pub fn node(&self, idx: usize, out: &mut [f64]) {
        let n = self.grid.len();
        for (c, o) in out.iter_mut().enumerate().take(self.n_comp) {
            *o = self.data[c * n + idx];
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&self.data)
    }
}

/// Seven-point Laplacian at interior nodes; boundary nodes are set to zero.
pub fn laplacian7(f: &ScalarField) -> Result<ScalarField> {
    f.validate()?;
    let g = f.grid;
    let [nx, ny, nz] = g.dims;
    let inv_h2 = 1.0 / (g.spacing * g.spacing);
    let (sx, sy, sz) = (1, nx, nx * ny);
    let v = &f.values;
    let mut out = vec![0.0; g.len()];
    for k in 1..nz - 1 {
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let p = g.idx(i, j, k);
                let c = v[p];
                out[p] = ((v[p + sx] + v[p - sx] - 2.0 * c)
                    + (v[p + sy] + v[p - sy] - 2.0 * c)
                    + (v[p + sz] + v[p - sz] - 2.0 * c))
                    * inv_h2;
            }
        }
    }
    Ok(ScalarField { grid: g, values: out })
}

/// Derivative along `axis` at node `(i, j, k)`: central in the interior of
/// the axis, one-sided second order at its ends.
#[inline]
pub fn partial(values: &[f64], grid: &Grid3, axis: usize, i: usize, j: usize, k: usize) -> f64 {
    let n = grid.dims[axis];
    let pos = [i, j, k][axis];
    let stride = [1, grid.dims[0], grid.dims[0] * grid.dims[1]][axis];
    let p = grid.idx(i, j, k);
    let inv_2h = 0.5 / grid.spacing;
    if pos == 0 {
        (-3.0 * values[p] + 4.0 * values[p + stride] - values[p + 2 * stride]) * inv_2h
    } else if pos + 1 == n {
        (3.0 * values[p] - 4.0 * values[p - stride] + values[p - 2 * stride]) * inv_2h
    } else {
        (values[p + stride] - values[p - stride]) * inv_2h
    }
}

/// Gradient with central differences inside and second-order one-sided
/// differences on the boundary.
pub fn gradient_c(f: &ScalarField) -> Result<[ScalarField; 3]> {
    f.validate()?;
    let g = f.grid;
    let mut out = [
        vec![0.0; g.len()],
        vec![0.0; g.len()],
        vec![0.0; g.len()],
    ];
    for k in 0..g.dims[2] {
        for j in 0..g.dims[1] {
            for i in 0..g.dims[0] {
                let p = g.idx(i, j, k);
                for (a, o) in out.iter_mut().enumerate() {
                    o[p] = partial(&f.values, &g, a, i, j, k);
                }
            }
        }
    }
    let [gx, gy, gz] = out;
    Ok([
        ScalarField { grid: g, values: gx },
        ScalarField { grid: g, values: gy },
        ScalarField { grid: g, values: gz },
    ])
}

/// Backward second-order `∂z` on the top face, `(3f_K - 4f_{K-1} + f_{K-2}) / 2h`.
/// The result is indexed `i + nx * j`.
pub fn dz_oneside(f: &ScalarField) -> Result<Vec<f64>> {
    let g = f.grid;
    if g.dims[2] < 3 {
        return Err(Error::InvalidGrid("need three layers for a one-sided z derivative".into()));
    }
    f.validate()?;
    Ok(dz_top(f.values(), &g))
}

pub(crate) fn dz_top(values: &[f64], g: &Grid3) -> Vec<f64> {
    let [nx, ny, nz] = g.dims;
    let k = nz - 1;
    let inv_2h = 0.5 / g.spacing;
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push(
                (3.0 * values[g.idx(i, j, k)] - 4.0 * values[g.idx(i, j, k - 1)]
                    + values[g.idx(i, j, k - 2)])
                    * inv_2h,
            );
        }
    }
    out
}

/// Trilinear interpolation onto the 2x nested refinement of `f`'s grid.
pub fn interp_refine(f: &ScalarField, fine: &Grid3) -> Result<ScalarField> {
    let coarse = f.grid;
    if !coarse.is_refined_by(fine) {
        return Err(Error::GridMismatch("target is not the 2x nested refinement".into()));
    }
    f.validate()?;
    let mut out = vec![0.0; fine.len()];
    // Per axis: fine index m maps to coarse index m/2, with weight 1/2 on the
    // neighbour when m is odd.
    let split = |m: usize| -> (usize, bool) { (m / 2, m % 2 == 1) };
    for k in 0..fine.dims[2] {
        let (ck, hk) = split(k);
        for j in 0..fine.dims[1] {
            let (cj, hj) = split(j);
            for i in 0..fine.dims[0] {
                let (ci, hi) = split(i);
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for dk in 0..=(hk as usize) {
                    for dj in 0..=(hj as usize) {
                        for di in 0..=(hi as usize) {
                            let w = (if hi { 0.5 } else { 1.0 })
                                * (if hj { 0.5 } else { 1.0 })
                                * (if hk { 0.5 } else { 1.0 });
                            acc += w * f.at(ci + di, cj + dj, ck + dk);
                            wsum += w;
                        }
                    }
                }
                debug_assert!((wsum - 1.0).abs() < 1e-15);
                out[fine.idx(i, j, k)] = acc;
            }
        }
    }
    Ok(ScalarField { grid: *fine, values: out })
}

/// Injection onto a coarser nested grid: keep the values at coincident nodes.
pub fn restrict(f: &ScalarField, coarse: &Grid3) -> Result<ScalarField> {
    if !coarse.is_refined_by(&f.grid) {
        return Err(Error::GridMismatch("source is not the 2x refinement of the target".into()));
    }
    let mut out = Vec::with_capacity(coarse.len());
    for k in 0..coarse.dims[2] {
        for j in 0..coarse.dims[1] {
            for i in 0..coarse.dims[0] {
                out.push(f.at(2 * i, 2 * j, 2 * k));
            }
        }
    }
    Ok(ScalarField { grid: *coarse, values: out })
}

/// Which nodes a quadrature visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeSet {
    All,
    Interior,
}

/// `Σ f·weight·h³` over the requested nodes, summed in index order.
pub fn weighted_quadrature(f: &ScalarField, weight: impl Fn([f64; 3]) -> f64, nodes: NodeSet) -> f64 {
    let g = f.grid;
    let h3 = g.spacing * g.spacing * g.spacing;
    let mut acc = 0.0;
    for k in 0..g.dims[2] {
        for j in 0..g.dims[1] {
            for i in 0..g.dims[0] {
                if nodes == NodeSet::Interior && g.is_boundary(i, j, k) {
                    continue;
                }
                acc += f.at(i, j, k) * weight(g.coord(i, j, k));
            }
        }
    }
    acc * h3
}
