//! The subcommands. Each one computes everything first and only then creates
//! its output directory, so a failed run leaves nothing behind.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use convexify_core::acquire::{add_noise, build_cauchy, pick_all};
use convexify_core::basis::PolyBasis;
use convexify_core::grid::{Grid3, ScalarField};
use convexify_core::optimize::{IterRecord, LevelSummary, Observer};
use convexify_core::pipeline::{eikonal_arrivals, invert, probe_convexity, simulate, ArrivalSource};
use convexify_core::recon::{make_phantom, metrics, Phantom, ReconReport};
use convexify_core::verify::{carleman_sweep, CarlemanReport, ConvexityReport};
use serde::{Deserialize, Serialize};

use crate::config::{parse_spacing, Geometry, RunConfig};
use crate::error::{CliError, Result};
use crate::formats::{
    read_cauchy, read_json, read_recording, trace_csv, write_bytes, write_cauchy, write_field, write_json,
    write_recording, write_scalar, write_slices, write_vtk, CauchyFile,
};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Parser)]
#[command(name = "convexify", version, about = "Recover the coefficient of the 3D acoustic equation from single-source boundary data")]
pub struct Cli {
    /// JSON run configuration (or a manifest, to rerun a command). Flags win over the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Simulation box preset.
    #[arg(long, global = true, value_enum)]
    pub geometry: Option<Geometry>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// No progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a phantom on Ω and write it as raw, VTK and slice files.
    Phantom(PhantomArgs),
    /// Run the forward solver and record the boundary traces.
    Simulate(SimulateArgs),
    /// Pick arrivals and project the recorded traces onto the basis.
    Pick(PickArgs),
    /// Minimise the weighted functional and extract the coefficient.
    Invert(InvertArgs),
    /// Empirical checks of the Carleman estimate and of convexity.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Summarise an inversion directory as text and CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory (created if needed).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub name: Option<String>,
    /// Mesh spacing, e.g. 1/16.
    #[arg(long, value_parser = parse_spacing)]
    pub h: Option<f64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub phantom: Option<String>,
    #[arg(long, value_parser = parse_spacing)]
    pub h: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Final time T0.
    #[arg(long)]
    pub t0: Option<f64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arrivals {
    Picked,
    Eikonal,
}

impl From<Arrivals> for ArrivalSource {
    fn from(a: Arrivals) -> Self {
        match a {
            Arrivals::Picked => ArrivalSource::Picked,
            Arrivals::Eikonal => ArrivalSource::Eikonal,
        }
    }
}

fn parse_basis(s: &str) -> std::result::Result<(usize, f64), String> {
    let (n, t1) = s.split_once(',').ok_or_else(|| format!("expected N,T1, got `{s}`"))?;
    Ok((
        n.trim().parse().map_err(|_| format!("bad N in `{s}`"))?,
        t1.trim().parse().map_err(|_| format!("bad T1 in `{s}`"))?,
    ))
}

#[derive(Debug, Args)]
pub struct PickArgs {
    /// Directory written by `simulate`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Number of basis functions.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Window length after the arrival.
    #[arg(long)]
    pub t1: Option<f64>,
    /// Both at once, as `N,T1`.
    #[arg(long, value_parser = parse_basis, conflicts_with_all = ["n", "t1"])]
    pub basis: Option<(usize, f64)>,
    /// Relative noise level added to the traces.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum)]
    pub arrivals: Option<Arrivals>,
    /// Phantom for eikonal arrivals, when the recording does not name one.
    #[arg(long)]
    pub phantom: Option<String>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    /// Directory written by `pick`.
    #[arg(long)]
    pub data: PathBuf,
    /// Mesh spacings coarse to fine, e.g. 1/8,1/16.
    #[arg(long, value_delimiter = ',', value_parser = parse_spacing)]
    pub levels: Option<Vec<f64>>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Must match the number of basis functions in the data.
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    /// Ratio of the two sides of the Carleman estimate on random admissible functions.
    Carleman(CarlemanArgs),
    /// Bregman gaps and second differences of the functional on random feasible pairs.
    Convexity(ConvexityArgs),
}

#[derive(Debug, Args)]
pub struct CarlemanArgs {
    #[arg(long, value_parser = parse_spacing)]
    pub h: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub b: Option<f64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ConvexityArgs {
    /// Directory written by `pick`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Mesh on which the functional is probed.
    #[arg(long, value_parser = parse_spacing, default_value = "1/8")]
    pub h: f64,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `invert`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

/// Resolved settings shared by all commands.
struct Ctx {
    cfg: RunConfig,
    quiet: bool,
    manifest: ManifestBuilder,
}

impl Ctx {
    fn out_dir(&self, out: &OutArg) -> Result<PathBuf> {
        out.out
            .clone()
            .or_else(|| self.cfg.output.clone())
            .ok_or_else(|| CliError::Config("no output directory: pass --out or set `output` in the config".into()))
    }

    fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn finish(&self, dir: &Path, outputs: &[PathBuf]) -> Result<()> {
        self.manifest.finish(dir, &self.cfg, outputs)?;
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.into(), source: e })
}

fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::MissingInput { path: dir.into(), reason: "directory does not exist".into() })
    }
}

/// Runs one parsed command line. `args` are recorded in the manifest.
pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(g) = cli.geometry {
        cfg.geometry = Some(g);
    }
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    let name = match &cli.command {
        Command::Phantom(_) => "phantom",
        Command::Simulate(_) => "simulate",
        Command::Pick(_) => "pick",
        Command::Invert(_) => "invert",
        Command::Verify(VerifyCommand::Carleman(_)) => "verify carleman",
        Command::Verify(VerifyCommand::Convexity(_)) => "verify convexity",
        Command::Report(_) => "report",
    };
    let mut ctx = Ctx { cfg, quiet: cli.quiet, manifest: ManifestBuilder::start(name, args) };
    match cli.command {
        Command::Phantom(a) => cmd_phantom(&mut ctx, a),
        Command::Simulate(a) => cmd_simulate(&mut ctx, a),
        Command::Pick(a) => cmd_pick(&mut ctx, a),
        Command::Invert(a) => cmd_invert(&mut ctx, a),
        Command::Verify(VerifyCommand::Carleman(a)) => cmd_carleman(&mut ctx, a),
        Command::Verify(VerifyCommand::Convexity(a)) => cmd_convexity(&mut ctx, a),
        Command::Report(a) => cmd_report(&mut ctx, a),
    }
}

/// Volume and slice outputs of a coefficient-like field.
fn write_volume(
    dir: &Path,
    formats: &crate::config::Formats,
    stem: &str,
    fields: &[(&str, &ScalarField)],
    range: (f64, f64),
) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let (_, main) = fields[0];
    if formats.raw {
        out.extend(write_scalar(dir, stem, main)?);
    }
    if formats.vtk {
        let p = dir.join(format!("{stem}.vtk"));
        write_vtk(&p, stem, fields)?;
        out.push(p);
    }
    if formats.slices {
        out.extend(write_slices(dir, stem, main, range, formats.pgm)?);
    }
    Ok(out)
}

fn phantom_range(p: &Phantom) -> (f64, f64) {
    (p.peak().min(1.0), p.peak().max(1.0))
}

fn cmd_phantom(ctx: &mut Ctx, a: PhantomArgs) -> Result<()> {
    let exp = &mut ctx.cfg.experiment;
    if let Some(n) = a.name {
        exp.phantom = n;
    }
    if let Some(h) = a.h {
        exp.forward.h = h;
    }
    ctx.cfg.resolve()?;
    let exp = &ctx.cfg.experiment;
    let phantom = make_phantom(&exp.phantom, exp.forward.h)?;
    let c = phantom.sample(&exp.forward.omega_grid()?)?;
    let dir = ctx.out_dir(&a.out)?;
    create_dir(&dir)?;
    let p = dir.join("phantom.json");
    write_json(&p, &phantom)?;
    let mut outputs = vec![p];
    outputs.extend(write_volume(&dir, &ctx.cfg.formats, "c", &[("c", &c)], phantom_range(&phantom))?);
    ctx.progress(format!("phantom {}: {} nodes, peak c = {}", phantom.name, c.grid().len(), phantom.peak()));
    ctx.finish(&dir, &outputs)
}

fn cmd_simulate(ctx: &mut Ctx, a: SimulateArgs) -> Result<()> {
    // Presets first so that explicit flags override them.
    ctx.cfg.resolve()?;
    let fwd = &mut ctx.cfg.experiment.forward;
    if let Some(h) = a.h {
        fwd.h = h;
    }
    if let Some(dt) = a.dt {
        fwd.dt = dt;
    }
    if let Some(t0) = a.t0 {
        fwd.t0 = t0;
    }
    if let Some(p) = a.phantom {
        ctx.cfg.experiment.phantom = p;
    }
    // Presets would now overwrite the explicit T0; they have been applied.
    ctx.cfg.geometry = None;
    let exp = &ctx.cfg.experiment;
    exp.forward.validate()?;
    let dir = ctx.out_dir(&a.out)?;
    let phantom = make_phantom(&exp.phantom, exp.forward.h)?;
    let started = Instant::now();
    ctx.progress(format!(
        "simulating {} on {:?} nodes, {} steps",
        phantom.name,
        exp.forward.grid()?.dims,
        exp.forward.n_steps()
    ));
    let rec = simulate(&phantom, &exp.forward)?;
    ctx.progress(format!("forward run took {:.1} s", started.elapsed().as_secs_f64()));
    create_dir(&dir)?;
    let outputs = write_recording(&dir, &rec, Some(&phantom.name))?.to_vec();
    ctx.finish(&dir, &outputs)
}

fn cmd_pick(ctx: &mut Ctx, a: PickArgs) -> Result<()> {
    ctx.cfg.resolve()?;
    require_dir(&a.input)?;
    let (mut rec, header) = read_recording(&a.input)?;
    ctx.manifest.input(&a.input.join("recording.json"))?;
    ctx.manifest.input(&a.input.join("recording.bin"))?;
    let exp = &mut ctx.cfg.experiment;
    if let Some((n, t1)) = a.basis {
        exp.acquire.n_basis = n;
        exp.acquire.t1 = t1;
    }
    if let Some(n) = a.n {
        exp.acquire.n_basis = n;
    }
    if let Some(t1) = a.t1 {
        exp.acquire.t1 = t1;
    }
    if let Some(eps) = a.noise {
        exp.noise = eps;
    }
    if let Some(arr) = a.arrivals {
        exp.arrivals = arr.into();
    }
    let phantom_name = a.phantom.or(header.phantom.clone());
    if let Some(p) = &phantom_name {
        exp.phantom = p.clone();
    }
    if !(exp.noise >= 0.0 && exp.noise.is_finite()) {
        return Err(CliError::Config("--noise must be non-negative".into()));
    }
    let exp = &ctx.cfg.experiment;
    let basis = PolyBasis::build(exp.acquire.t1, exp.acquire.n_basis)?;
    if exp.noise > 0.0 {
        rec = add_noise(&rec, exp.noise, exp.seed);
    }
    let arrivals = match exp.arrivals {
        ArrivalSource::Picked => pick_all(&rec, exp.acquire.pick_threshold)?,
        ArrivalSource::Eikonal => {
            let name = phantom_name.ok_or_else(|| {
                CliError::Config("eikonal arrivals need the true medium: pass --phantom".into())
            })?;
            eikonal_arrivals(&make_phantom(&name, rec.omega.spacing)?, &rec)?
        }
    };
    let data = build_cauchy(&rec, &arrivals, &basis, exp.acquire.normalize_amplitude)?;
    let file = CauchyFile {
        data,
        phantom: header.phantom,
        source: rec.source,
        t1: exp.acquire.t1,
        n_basis: exp.acquire.n_basis,
    };
    let dir = ctx.out_dir(&a.out)?;
    create_dir(&dir)?;
    let mut outputs = write_cauchy(&dir, &file, Some(&arrivals))?;
    let p = dir.join("basis.json");
    write_json(&p, &BasisDump::new(&basis))?;
    outputs.push(p);
    ctx.progress(format!("projected {} boundary nodes onto N = {}", file.data.boundary_nodes.len(), file.n_basis));
    ctx.finish(&dir, &outputs)
}

/// The basis in readable form: polynomial coefficients, `s_n = P_n'(0)` and `D`.
#[derive(Debug, Serialize, Deserialize)]
pub struct BasisDump {
    pub t1: f64,
    pub n: usize,
    /// `coefficients[n - 1][k]` multiplies `t^k` in `P_n`.
    pub coefficients: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    /// Row-major `D_{mn} = ∫ P_m P_n' dt`.
    pub d: Vec<Vec<f64>>,
}

impl BasisDump {
    pub fn new(b: &PolyBasis) -> Self {
        let n = b.len();
        Self {
            t1: b.t1(),
            n,
            coefficients: (1..=n).map(|i| b.coefficients(i).to_vec()).collect(),
            s: b.s().to_vec(),
            d: b.d_matrix().chunks(n).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// Progress on stderr and wall-clock times per level.
struct Progress {
    quiet: bool,
    started: Instant,
    every: usize,
}

impl Observer for Progress {
    fn now(&mut self) -> Option<f64> {
        Some(self.started.elapsed().as_secs_f64())
    }

    fn on_iteration(&mut self, r: &IterRecord) {
        if !self.quiet && (r.iter % self.every == 0 || r.step == 0.0) {
            eprintln!(
                "level {} iter {:>5}  J {:.6e}  |grad| {:.3e}  step {:.2e}",
                r.level, r.iter, r.j, r.grad_norm, r.step
            );
        }
    }
}

/// `trace.json`: the per-level summary without clock readings, so that
/// repeated runs give identical bytes. Wall times go to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub levels: Vec<LevelSummary>,
    pub clamped: usize,
}

fn cmd_invert(ctx: &mut Ctx, a: InvertArgs) -> Result<()> {
    ctx.cfg.resolve()?;
    require_dir(&a.data)?;
    let file = read_cauchy(&a.data)?;
    ctx.manifest.input(&a.data.join("cauchy.json"))?;
    ctx.manifest.input(&a.data.join("cauchy.bin"))?;
    let inv = &mut ctx.cfg.experiment.inversion;
    if let Some(l) = a.levels {
        inv.plan.levels = l;
    }
    if let Some(l) = a.lambda {
        inv.objective.lambda = l;
    }
    if let Some(t) = a.tol {
        inv.plan.tol = t;
    }
    if let Some(m) = a.max_iter {
        inv.plan.max_iter = m;
    }
    if let Some(n) = a.n {
        if n != file.n_basis {
            return Err(CliError::Config(format!(
                "--N {n} does not match the data, which were projected onto {} basis functions; rerun `pick --N {n}`",
                file.n_basis
            )));
        }
    }
    if let Some(p) = &file.phantom {
        ctx.cfg.experiment.phantom = p.clone();
    }
    ctx.cfg.experiment.acquire.n_basis = file.n_basis;
    ctx.cfg.experiment.acquire.t1 = file.t1;
    let inv = &ctx.cfg.experiment.inversion;
    inv.plan.validate()?;
    inv.objective.validate(file.data.omega.upper()[2] - file.data.omega.origin[2])?;
    let basis = PolyBasis::build(file.t1, file.n_basis)?;
    let mut progress = Progress { quiet: ctx.quiet, started: Instant::now(), every: 250 };
    let result = invert(&file.data, &basis, file.source, inv, &mut progress)?;
    let h_data = file.data.omega.spacing;
    let phantom = file.phantom.as_deref().map(|n| make_phantom(n, h_data)).transpose()?;
    let report = phantom.as_ref().map(|p| metrics(&result.c, p)).transpose()?;

    let dir = ctx.out_dir(&a.out)?;
    create_dir(&dir)?;
    let mut outputs = Vec::new();
    if ctx.cfg.formats.raw {
        outputs.extend(write_field(&dir, "w", &result.w)?);
    }
    let tau = result.w.component_field(0);
    let truth = phantom.as_ref().map(|p| p.sample(result.c.grid())).transpose()?;
    let mut vols: Vec<(&str, &ScalarField)> = vec![("c", &result.c), ("tau", &tau)];
    if let Some(t) = &truth {
        vols.push(("c_true", t));
    }
    let range = (result.c.min().min(1.0), result.c.max().max(phantom.as_ref().map_or(1.0, Phantom::peak)));
    outputs.extend(write_volume(&dir, &ctx.cfg.formats, "c", &vols, range)?);

    let p = dir.join("trace.csv");
    write_bytes(&p, trace_csv(&result.trace).as_bytes())?;
    outputs.push(p);
    let mut levels = result.trace.levels.clone();
    let wall: Vec<Option<f64>> = levels.iter_mut().map(|l| l.wall_seconds.take()).collect();
    let p = dir.join("trace.json");
    write_json(&p, &TraceSummary { levels, clamped: result.clamped })?;
    outputs.push(p);
    if let Some(r) = &report {
        let p = dir.join("report.json");
        write_json(&p, r)?;
        outputs.push(p);
        ctx.progress(format!("max c = {:.3}, relative L2 error {:.3}", r.max_c, r.rel_l2));
    }
    ctx.progress(format!("level wall times (s): {wall:?}"));
    ctx.finish(&dir, &outputs)
}

fn carleman_text(r: &CarlemanReport) -> String {
    let mut s = format!("Carleman estimate probe, h = {}, b = {}\n", r.h, r.b);
    for l in &r.per_lambda {
        let _ = writeln!(
            s,
            "  lambda {:>6}: {} samples, min ratio {:.4e}, mean {:.4e} (worst sample {})",
            l.lambda, l.samples, l.min_ratio, l.mean_ratio, l.worst_sample
        );
    }
    let _ = writeln!(s, "  collapse across the sweep {:.3} (allowed {})", r.collapse, r.max_collapse);
    let _ = writeln!(s, "  min ratio floor {}: {}", r.rho_floor, if r.pass { "PASS" } else { "FAIL" });
    s
}

fn cmd_carleman(ctx: &mut Ctx, a: CarlemanArgs) -> Result<()> {
    ctx.cfg.resolve()?;
    let c = &mut ctx.cfg.carleman;
    if let Some(h) = a.h {
        c.h = h;
    }
    if let Some(l) = a.lambdas {
        c.lambdas = l;
    }
    if let Some(n) = a.samples {
        c.samples = n;
    }
    if let Some(b) = a.b {
        c.b = b;
    }
    let c = &ctx.cfg.carleman;
    let grid = Grid3::omega(ctx.cfg.experiment.forward.omega_side, c.h)?;
    let report = carleman_sweep(&grid, c)?;
    let dir = ctx.out_dir(&a.out)?;
    create_dir(&dir)?;
    let json = dir.join("carleman.json");
    write_json(&json, &report)?;
    let text = carleman_text(&report);
    let txt = dir.join("carleman.txt");
    write_bytes(&txt, text.as_bytes())?;
    ctx.progress(&text);
    ctx.finish(&dir, &[json, txt])
}

fn convexity_text(r: &ConvexityReport, h: f64, lambda: f64) -> String {
    format!(
        "Convexity probe, h = {h}, lambda = {lambda}, {} pairs ({} infeasible draws redrawn)\n  \
         min Bregman gap {:.4e}, min second difference {:.4e}, non-negative fraction {}\n  \
         floor -{:e}: {}\n",
        r.pairs,
        r.resampled,
        r.min_gap,
        r.min_second_difference,
        r.nonnegative_fraction,
        r.floor,
        if r.pass { "PASS" } else { "FAIL" }
    )
}

fn cmd_convexity(ctx: &mut Ctx, a: ConvexityArgs) -> Result<()> {
    ctx.cfg.resolve()?;
    require_dir(&a.data)?;
    let file = read_cauchy(&a.data)?;
    ctx.manifest.input(&a.data.join("cauchy.json"))?;
    ctx.manifest.input(&a.data.join("cauchy.bin"))?;
    if let Some(p) = a.pairs {
        ctx.cfg.convexity.pairs = p;
    }
    if let Some(l) = a.lambda {
        ctx.cfg.experiment.inversion.objective.lambda = l;
    }
    let inv = &ctx.cfg.experiment.inversion;
    let basis = PolyBasis::build(file.t1, file.n_basis)?;
    let report = probe_convexity(&file.data, &basis, file.source, inv, a.h, &ctx.cfg.convexity)?;
    let dir = ctx.out_dir(&a.out)?;
    create_dir(&dir)?;
    let json = dir.join("convexity.json");
    write_json(&json, &report)?;
    let text = convexity_text(&report, a.h, inv.objective.lambda);
    let txt = dir.join("convexity.txt");
    write_bytes(&txt, text.as_bytes())?;
    ctx.progress(&text);
    ctx.finish(&dir, &[json, txt])
}

fn fmt_point(p: Option<[f64; 3]>) -> String {
    p.map_or("none".into(), |p| format!("({:.3}, {:.3}, {:.3})", p[0], p[1], p[2]))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("none".into(), |v| format!("{v:.4}"))
}

/// Text summary and `key,value` CSV of an inversion directory.
pub fn summarise(trace: &TraceSummary, report: Option<&ReconReport>) -> (String, String) {
    let mut txt = String::new();
    let mut csv = String::from("key,value\n");
    if let Some(r) = report {
        let _ = writeln!(
            txt,
            "Phantom {}: recovered c ranges over [{:.3}, {:.3}]; max c = {:.3} ({} inside the detected inclusion).",
            r.phantom,
            r.min_c,
            r.max_c,
            r.max_c,
            fmt_opt(r.max_c_in_mask)
        );
        let _ = writeln!(
            txt,
            "Inclusion centre {} against the true {}, offset {}.",
            fmt_point(r.com),
            fmt_point(r.true_com),
            fmt_opt(r.com_offset)
        );
        if let Some((lo, hi)) = r.support_range {
            let _ = writeln!(txt, "Inside the true inclusions c varies between {lo:.3} and {hi:.3}.");
        }
        let _ = writeln!(txt, "Relative L2 error {:.4}; {} nodes clamped at the floor.", r.rel_l2, r.clamped);
        let mut row = |k: &str, v: String| {
            let _ = writeln!(csv, "{k},{v}");
        };
        row("phantom", r.phantom.clone());
        row("max_c", r.max_c.to_string());
        row("min_c", r.min_c.to_string());
        row("max_c_in_mask", r.max_c_in_mask.map_or(String::new(), |v| v.to_string()));
        row("rel_l2", r.rel_l2.to_string());
        row("com_offset", r.com_offset.map_or(String::new(), |v| v.to_string()));
        for (i, ax) in ["x", "y", "z"].iter().enumerate() {
            row(&format!("com_{ax}"), r.com.map_or(String::new(), |c| c[i].to_string()));
        }
        row("support_min", r.support_range.map_or(String::new(), |s| s.0.to_string()));
        row("support_max", r.support_range.map_or(String::new(), |s| s.1.to_string()));
    } else {
        let _ = writeln!(txt, "No phantom recorded with the data; reconstruction metrics unavailable.");
    }
    for (i, l) in trace.levels.iter().enumerate() {
        let _ = writeln!(
            txt,
            "Level {i} (h = {}): {} iterations, J {:.4e} -> {:.4e}, |grad J| {:.3e}, {}.",
            l.h,
            l.iterations,
            l.j_start,
            l.j_final,
            l.grad_norm_final,
            if l.converged { "converged" } else { "iteration limit reached" }
        );
        let _ = writeln!(csv, "level{i}_h,{}", l.h);
        let _ = writeln!(csv, "level{i}_iterations,{}", l.iterations);
        let _ = writeln!(csv, "level{i}_j_final,{}", l.j_final);
        let _ = writeln!(csv, "level{i}_converged,{}", l.converged);
    }
    (txt, csv)
}

fn cmd_report(ctx: &mut Ctx, a: ReportArgs) -> Result<()> {
    ctx.cfg.resolve()?;
    require_dir(&a.input)?;
    let tp = a.input.join("trace.json");
    let trace: TraceSummary = read_json(&tp)?;
    ctx.manifest.input(&tp)?;
    let rp = a.input.join("report.json");
    let report: Option<ReconReport> = if rp.exists() {
        ctx.manifest.input(&rp)?;
        Some(read_json(&rp)?)
    } else {
        None
    };
    let (txt, csv) = summarise(&trace, report.as_ref());
    let dir = ctx.out_dir(&a.out)?;
    create_dir(&dir)?;
    let t = dir.join("summary.txt");
    let c = dir.join("summary.csv");
    write_bytes(&t, txt.as_bytes())?;
    write_bytes(&c, csv.as_bytes())?;
    if !ctx.quiet {
        let _ = std::io::stdout().write_all(txt.as_bytes());
    }
    ctx.finish(&dir, &[t, c])
}
