//! The stages in order: phantom, forward run, noise, acquisition, inversion,
//! coefficient extraction and metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::acquire::{add_noise, build_cauchy, pick_all, AcquireConfig, CauchyProjection, PickedArrivals};
use crate::basis::PolyBasis;
use crate::eikonal::fast_sweep_seeded;
use crate::forward::{run_forward, BoundaryRecording, ForwardConfig};
use crate::grid::{Grid3, ScalarField, VecField};
use crate::objective::{Objective, ObjectiveConfig};
use crate::optimize::{baseline_start, multilevel, LevelSettings, MultilevelPlan, Observer, RunTrace};
use crate::recon::{c_from_tau, clamp_below, make_phantom, metrics, Phantom, ReconReport, C_FLOOR};
use crate::system::{Feasibility, SystemCoeffs, DEFAULT_M_FLOOR};
use crate::verify::{convexity_probe, ConvexityConfig, ConvexityReport};
use crate::{Error, Result};

/// Where the boundary travel times come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalSource {
    /// Picked from the recorded traces.
    #[default]
    Picked,
    /// Computed by the eikonal solver from the true coefficient.
    Eikonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub objective: ObjectiveConfig,
    pub plan: MultilevelPlan,
    pub m_floor: f64,
    pub feasibility: Feasibility,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveConfig::default(),
            plan: MultilevelPlan::default(),
            m_floor: DEFAULT_M_FLOOR,
            feasibility: Feasibility::Permissive,
        }
    }
}

/// A whole synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub phantom: String,
    pub forward: ForwardConfig,
    pub acquire: AcquireConfig,
    pub inversion: InversionConfig,
    /// Relative noise level `ε`; zero means clean data.
    pub noise: f64,
    pub seed: u64,
    pub arrivals: ArrivalSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut inversion = InversionConfig::default();
        inversion.plan.levels = alloc::vec![1.0 / 8.0, 1.0 / 16.0];
        Self {
            phantom: "test1".into(),
            forward: ForwardConfig::full(1.0 / 16.0),
            acquire: AcquireConfig::default(),
            inversion,
            noise: 0.0,
            seed: 1,
            arrivals: ArrivalSource::Picked,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.forward.validate()?;
        self.inversion.plan.validate()?;
        self.inversion.objective.validate(self.forward.omega_side)?;
        make_phantom(&self.phantom, self.forward.h)?;
        let finest = *self.inversion.plan.levels.last().expect("validated plan");
        let ratio = finest / self.forward.h;
        if ratio < 1.0 - 1e-12 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "finest level {finest} must be a multiple of the forward spacing {}",
                self.forward.h
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig("noise level must be non-negative".into()));
        }
        Ok(())
    }
}

/// Runs the forward solver on the phantom sampled at the forward spacing.
pub fn simulate(phantom: &Phantom, cfg: &ForwardConfig) -> Result<BoundaryRecording> {
    let c = phantom.sample(&cfg.omega_grid()?)?;
    Ok(run_forward(&c, cfg)?.recording)
}

/// Boundary travel times from the eikonal equation in the true medium.
///
/// The medium is 1 outside `Ω` and the source lies below it, so every node
/// under `Ω` is reached along a straight ray; those nodes are seeded with
/// the exact distance and the sweeps only cover a slab around `Ω`.
pub fn eikonal_arrivals(phantom: &Phantom, recording: &BoundaryRecording) -> Result<PickedArrivals> {
    let omega = recording.omega;
    let h = omega.spacing;
    let pad = 8;
    let grid = Grid3::new(
        [omega.origin[0] - pad as f64 * h, omega.origin[1] - pad as f64 * h, omega.origin[2] - pad as f64 * h],
        h,
        [omega.dims[0] + 2 * pad, omega.dims[1] + 2 * pad, omega.dims[2] + 2 * pad],
    )?;
    let x0 = recording.source;
    let dist = |x: [f64; 3]| ((x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2) + (x[2] - x0[2]).powi(2)).sqrt();
    let c = phantom.sample(&grid)?;
    let init = ScalarField::from_fn(grid, dist)?;
    let frozen: Vec<bool> = (0..grid.len()).map(|p| grid.ijk(p)[2] < pad).collect();
    let tt = fast_sweep_seeded(&c, &init, &frozen, x0)?;
    let at = |node: usize, dk: usize| {
        let [i, j, k] = omega.ijk(node);
        tt.tau.at(i + pad, j + pad, k + pad - dk)
    };
    let tau0 = recording.boundary_nodes.iter().map(|&n| at(n, 0)).collect();
    let dz_tau0 = recording
        .top_nodes
        .iter()
        .map(|&n| (3.0 * at(n, 0) - 4.0 * at(n, 1) + at(n, 2)) / (2.0 * h))
        .collect();
    Ok(PickedArrivals { tau0, dz_tau0 })
}

/// Result of [`invert`].
#[derive(Debug, Clone)]
pub struct Inversion {
    pub w: VecField,
    /// `|∇τ|²` on the finest level, clamped below at [`C_FLOOR`].
    pub c: ScalarField,
    pub clamped: usize,
    pub trace: RunTrace,
}

/// Builds `J` on every level of the plan from data on a finer (or equal) grid.
pub fn level_objectives(data: &CauchyProjection, basis: &PolyBasis, cfg: &InversionConfig) -> Result<Vec<Objective>> {
    let coeffs = SystemCoeffs::new(basis.clone(), cfg.m_floor)?;
    let side = data.omega.upper()[2] - data.omega.origin[2];
    cfg.plan
        .levels
        .iter()
        .map(|&h| {
            let grid = Grid3::omega(side, h)?;
            let level_data = data.restrict_to(&grid)?;
            Objective::new(cfg.objective.clone(), coeffs.clone(), level_data, cfg.feasibility)
        })
        .collect()
}

/// Minimises `J` coarse to fine from the constant-medium start and extracts
/// the coefficient.
pub fn invert(
    data: &CauchyProjection,
    basis: &PolyBasis,
    source: [f64; 3],
    cfg: &InversionConfig,
    observer: &mut dyn Observer,
) -> Result<Inversion> {
    cfg.plan.validate()?;
    let objectives = level_objectives(data, basis, cfg)?;
    let coeffs = SystemCoeffs::new(basis.clone(), cfg.m_floor)?;
    let w0 = baseline_start(objectives[0].data(), source)?;
    let settings = LevelSettings::from_plan(&cfg.plan, &coeffs);
    let (w, trace) = multilevel(&objectives, w0, &settings, observer)?;
    let mut c = c_from_tau(&w.component_field(0))?;
    let clamped = clamp_below(&mut c, C_FLOOR);
    Ok(Inversion { w, c, clamped, trace })
}

/// Convexity probe of `J` on the level of spacing `h`, centred at the
/// constant-medium start. Feasibility is strict: every probed point keeps
/// the amplitude above the floor.
pub fn probe_convexity(
    data: &CauchyProjection,
    basis: &PolyBasis,
    source: [f64; 3],
    inversion: &InversionConfig,
    h: f64,
    cfg: &ConvexityConfig,
) -> Result<ConvexityReport> {
    let coeffs = SystemCoeffs::new(basis.clone(), inversion.m_floor)?;
    let side = data.omega.upper()[2] - data.omega.origin[2];
    let level = data.restrict_to(&Grid3::omega(side, h)?)?;
    let centre = baseline_start(&level, source)?;
    let f = Objective::new(inversion.objective.clone(), coeffs.clone(), level, Feasibility::Strict)?;
    convexity_probe(&f, &centre, &coeffs, cfg)
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub phantom: Phantom,
    pub recording: BoundaryRecording,
    pub arrivals: PickedArrivals,
    pub data: CauchyProjection,
    pub inversion: Inversion,
    pub report: ReconReport,
}

/// Acquisition step of an experiment, from an existing recording.
pub fn acquire_for(
    cfg: &ExperimentConfig,
    phantom: &Phantom,
    recording: &BoundaryRecording,
) -> Result<(PickedArrivals, CauchyProjection)> {
    let recording = if cfg.noise > 0.0 { add_noise(recording, cfg.noise, cfg.seed) } else { recording.clone() };
    let basis = PolyBasis::build(cfg.acquire.t1, cfg.acquire.n_basis)?;
    let arrivals = match cfg.arrivals {
        ArrivalSource::Picked => pick_all(&recording, cfg.acquire.pick_threshold)?,
        ArrivalSource::Eikonal => eikonal_arrivals(phantom, &recording)?,
    };
    let data = build_cauchy(&recording, &arrivals, &basis, cfg.acquire.normalize_amplitude)?;
    Ok((arrivals, data))
}

/// Inversion and metrics for an experiment whose recording is already known
/// (the forward run dominates the cost and is often shared).
pub fn run_from_recording(
    cfg: &ExperimentConfig,
    recording: BoundaryRecording,
    observer: &mut dyn Observer,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let phantom = make_phantom(&cfg.phantom, cfg.forward.h)?;
    let (arrivals, data) = acquire_for(cfg, &phantom, &recording)?;
    let basis = PolyBasis::build(cfg.acquire.t1, cfg.acquire.n_basis)?;
    let inversion = invert(&data, &basis, recording.source, &cfg.inversion, observer)?;
    let report = metrics(&inversion.c, &phantom)?;
    Ok(ExperimentOutput { phantom, recording, arrivals, data, inversion, report })
}

pub fn run_experiment(cfg: &ExperimentConfig, observer: &mut dyn Observer) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let phantom = make_phantom(&cfg.phantom, cfg.forward.h)?;
    let recording = simulate(&phantom, &cfg.forward)?;
    run_from_recording(cfg, recording, observer)
}
