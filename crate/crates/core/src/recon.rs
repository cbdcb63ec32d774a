//! The coefficient from the recovered travel time, the test phantoms, and
//! error metrics against them.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::grid::{gradient_c, Grid3, ScalarField};
use crate::{Error, Result};

/// `c = |∇τ|²`, central differences inside, one-sided on the boundary.
pub fn c_from_tau(tau: &ScalarField) -> Result<ScalarField> {
    let [gx, gy, gz] = gradient_c(tau)?;
    let values = gx
        .values()
        .iter()
        .zip(gy.values())
        .zip(gz.values())
        .map(|((a, b), c)| a * a + b * b + c * c)
        .collect();
    ScalarField::new(*tau.grid(), values)
}

/// `3t² - 2t³` clamped to `[0, 1]`: continuous with its first derivative.
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Indicator of `{d < 0}` for a signed distance-like `d`, ramped over `width`.
fn ramp(d: f64, width: f64) -> f64 {
    if width <= 0.0 {
        return if d < 0.0 { 1.0 } else { 0.0 };
    }
    smoothstep(0.5 - d / width)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inclusion {
    /// Ellipsoid with the given semi-axes and constant value inside.
    Ellipsoid { centre: [f64; 3], semi_axes: [f64; 3], value: f64 },
    /// `1 + amp·cos(2π ρ)·bump(ρ)`, `ρ = |x - centre| / radius`, with the bump
    /// equal to 1 for `ρ ≤ 1/2` and falling smoothly to 0 at `ρ = 1`.
    RadialWave { centre: [f64; 3], radius: f64, amp: f64 },
}

impl Inclusion {
    /// Deviation of `c` from 1 due to this inclusion.
    fn excess(&self, x: [f64; 3], width: f64) -> f64 {
        match *self {
            Inclusion::Ellipsoid { centre, semi_axes, value } => {
                // Distance along the ray from the centre, scaled to the
                // smallest semi-axis so the ramp is roughly `width` thick.
                let s = (0..3).map(|a| ((x[a] - centre[a]) / semi_axes[a]).powi(2)).sum::<f64>().sqrt();
                let r_min = semi_axes.iter().copied().fold(f64::INFINITY, f64::min);
                (value - 1.0) * ramp((s - 1.0) * r_min, width)
            }
            Inclusion::RadialWave { centre, radius, amp } => {
                let d = ((x[0] - centre[0]).powi(2) + (x[1] - centre[1]).powi(2) + (x[2] - centre[2]).powi(2)).sqrt();
                let rho = d / radius;
                if rho >= 1.0 {
                    return 0.0;
                }
                let bump = if rho <= 0.5 { 1.0 } else { smoothstep(2.0 * (1.0 - rho)) };
                amp * (2.0 * core::f64::consts::PI * rho).cos() * bump
            }
        }
    }
}

/// An analytic coefficient: 1 plus a sum of inclusions inside `Ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phantom {
    pub name: String,
    pub inclusions: Vec<Inclusion>,
    /// Width of the smoothed inclusion edge.
    pub edge_width: f64,
    /// `Ω = (-A/2, A/2)² x (0, A)`; the coefficient is 1 outside it.
    pub omega_side: f64,
}

pub const PHANTOM_NAMES: [&str; 6] = ["homogeneous", "test1", "test2", "test3", "test4", "test5"];

/// The named test media, with edges smoothed over `2h`.
pub fn make_phantom(name: &str, h: f64) -> Result<Phantom> {
    let centre = [0.0, 0.0, 0.5];
    let ball = |centre: [f64; 3], r: f64, value: f64| Inclusion::Ellipsoid { centre, semi_axes: [r; 3], value };
    let inclusions = match name {
        "homogeneous" => vec![],
        "test1" => vec![ball(centre, 0.2, 2.0)],
        "test2" => vec![Inclusion::Ellipsoid { centre, semi_axes: [0.25, 0.15, 0.15], value: 2.0 }],
        "test3" => vec![ball([-0.25, 0.0, 0.5], 0.15, 2.0), ball([0.25, 0.0, 0.5], 0.15, 2.0)],
        "test4" => vec![Inclusion::RadialWave { centre, radius: 0.4, amp: 0.6 }],
        "test5" => vec![ball(centre, 0.2, 5.0)],
        _ => {
            return Err(Error::UnknownPhantom { name: name.to_owned(), valid: PHANTOM_NAMES.join(", ") });
        }
    };
    Ok(Phantom { name: name.to_owned(), inclusions, edge_width: 2.0 * h, omega_side: 1.0 })
}

impl Phantom {
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let a = self.omega_side;
        let inside = x[0].abs() < a / 2.0 && x[1].abs() < a / 2.0 && x[2] > 0.0 && x[2] < a;
        if !inside {
            return 1.0;
        }
        1.0 + self.inclusions.iter().map(|inc| inc.excess(x, self.edge_width)).sum::<f64>()
    }

    pub fn sample(&self, grid: &Grid3) -> Result<ScalarField> {
        ScalarField::from_fn(*grid, |x| self.eval(x))
    }

    /// Largest and smallest nominal values, for thresholds.
    pub fn peak(&self) -> f64 {
        self.inclusions
            .iter()
            .map(|inc| match *inc {
                Inclusion::Ellipsoid { value, .. } => value,
                Inclusion::RadialWave { amp, .. } => 1.0 + amp,
            })
            .fold(1.0, f64::max)
    }

    /// Whether `x` lies in the support of some inclusion (edge ramp included).
    pub fn in_support(&self, x: [f64; 3]) -> bool {
        self.inclusions.iter().any(|inc| inc.excess(x, self.edge_width) != 0.0)
            || self.inclusions.iter().any(|inc| match *inc {
                Inclusion::RadialWave { centre, radius, .. } => {
                    ((x[0] - centre[0]).powi(2) + (x[1] - centre[1]).powi(2) + (x[2] - centre[2]).powi(2)).sqrt()
                        < radius
                }
                Inclusion::Ellipsoid { .. } => false,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub phantom: String,
    /// `‖c - c*‖ / ‖c*‖` over the nodes of `Ω`.
    pub rel_l2: f64,
    /// Detection threshold `1 + 0.3 (peak - 1)`.
    pub threshold: f64,
    pub mask_count: usize,
    /// Largest recovered value inside the detected mask, if any.
    pub max_c_in_mask: Option<f64>,
    pub max_c: f64,
    pub min_c: f64,
    /// Centre of mass of the detected mask and of the phantom's own mask.
    pub com: Option<[f64; 3]>,
    pub true_com: Option<[f64; 3]>,
    pub com_offset: Option<f64>,
    /// Centres of the 6-connected components of the detected mask, ordered
    /// by `x`, then `y`, then `z`.
    pub component_coms: Vec<[f64; 3]>,
    /// Range of the recovered values over the phantom's inclusion support.
    pub support_range: Option<(f64, f64)>,
    pub clamped: usize,
}

/// Lower clamp applied to recovered coefficients.
pub const C_FLOOR: f64 = 0.1;

/// Clamps `c` below at `floor`, returning how many nodes changed.
pub fn clamp_below(c: &mut ScalarField, floor: f64) -> usize {
    let mut n = 0;
    for v in c.values_mut() {
        if *v < floor {
            *v = floor;
            n += 1;
        }
    }
    n
}

fn mask_com(grid: &Grid3, mask: &[bool]) -> Option<[f64; 3]> {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for (p, &m) in mask.iter().enumerate() {
        if m {
            let x = grid.coord_of(p);
            for a in 0..3 {
                acc[a] += x[a];
            }
            n += 1;
        }
    }
    (n > 0).then(|| acc.map(|v| v / n as f64))
}

fn components(grid: &Grid3, mask: &[bool]) -> Vec<[f64; 3]> {
    let mut label = vec![usize::MAX; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        label[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let x = grid.coord_of(p);
            for a in 0..3 {
                acc[a] += x[a];
            }
            n += 1;
            let [i, j, k] = grid.ijk(p);
            let ijk = [i, j, k];
            for a in 0..3 {
                for delta in [-1isize, 1] {
                    let q = ijk[a] as isize + delta;
                    if q < 0 || q >= grid.dims[a] as isize {
                        continue;
                    }
                    let mut nb = ijk;
                    nb[a] = q as usize;
                    let np = grid.idx(nb[0], nb[1], nb[2]);
                    if mask[np] && label[np] == usize::MAX {
                        label[np] = id;
                        stack.push(np);
                    }
                }
            }
        }
        out.push(acc.map(|v| v / n as f64));
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite centres"));
    out
}

/// Compares a recovered coefficient with the phantom on the recovered grid.
pub fn metrics(recovered: &ScalarField, phantom: &Phantom) -> Result<ReconReport> {
    recovered.validate()?;
    let grid = *recovered.grid();
    let mut c = recovered.clone();
    let clamped = clamp_below(&mut c, C_FLOOR);
    let truth = phantom.sample(&grid)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in c.values().iter().zip(truth.values()) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    let threshold = 1.0 + 0.3 * (phantom.peak() - 1.0);
    let mask: Vec<bool> = c.values().iter().map(|&v| v > threshold && phantom.peak() > 1.0).collect();
    let true_mask: Vec<bool> = truth.values().iter().map(|&v| v > threshold && phantom.peak() > 1.0).collect();
    let max_c_in_mask = c
        .values()
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .reduce(f64::max);
    let com = mask_com(&grid, &mask);
    let true_com = mask_com(&grid, &true_mask);
    let com_offset = match (com, true_com) {
        (Some(a), Some(b)) => Some(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()),
        _ => None,
    };
    let mut support_range: Option<(f64, f64)> = None;
    for (p, &v) in c.values().iter().enumerate() {
        if phantom.in_support(grid.coord_of(p)) {
            support_range = Some(match support_range {
                None => (v, v),
                Some((lo, hi)) => (lo.min(v), hi.max(v)),
            });
        }
    }
    if !(den > 0.0) {
        return Err(Error::Degenerate(format!("phantom {} has zero norm", phantom.name)));
    }
    Ok(ReconReport {
        phantom: phantom.name.clone(),
        rel_l2: (num / den).sqrt(),
        threshold,
        mask_count: mask.iter().filter(|&&m| m).count(),
        max_c_in_mask,
        max_c: c.max(),
        min_c: c.min(),
        com,
        true_com,
        com_offset,
        component_coms: components(&grid, &mask),
        support_range,
        clamped,
    })
}
