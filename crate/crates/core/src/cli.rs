//! Command-line surface: configure systems from a TOML file, run the solvers
//! and verification checks, and emit CSV fields plus machine-readable
//! reports.
//!
//! Exit codes: 0 = all checks passed, 1 = at least one check failed,
//! 2 = invalid input (bad flags, malformed config, solver preconditions).

use std::fmt::Write as FmtWrite;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::chart::{
    closed_form_kernel_dimension, kernel_dimension, sample_points, ChartPoint, ConfigFn,
    Dimensions, SampleBox,
};
use crate::fields::{
    divergence, hdw_residual_on_section, integrate_quadratic, integrate_wave, write_csv, AxisSpec,
    BaseGrid, Boundary, InitialData, SectionGrid, WaveParams,
};
use crate::hamiltonian::{
    build_hdw, Hamiltonian, HdwGauge, MetricFamily, Potential, QuadraticHamiltonian,
};
use crate::symmetry::{
    complete_lift, conserved_from_killing, conserved_from_noether, killing_check, noether_check,
    BaseVectorField, PhaseVectorField,
};
use crate::{Error, Result};

/// Rank tolerance used by the kernel-dimension command.
const RANK_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(
    name = "kcosym",
    version,
    about = "Field-theory toolkit: wave/quadratic integration, symmetry checks, conserved currents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the wave system over refined grids and verify conservation.
    Wave(RunArgs),
    /// Integrate a constant-metric quadratic system and verify residuals.
    Quadratic(RunArgs),
    /// Check a candidate symmetry field and emit its conserved current.
    CheckNoether(RunArgs),
    /// Print the computed and closed-form solution-kernel dimensions.
    KernelDim {
        /// Number of base directions (must be >= 1).
        k: i64,
        /// Number of configuration components (must be >= 1).
        n: i64,
    },
    /// Evaluate the first-order field-equation residuals for a configuration.
    HdwResidual(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides [output] dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pointwise check tolerance (overrides [checks] tol).
    #[arg(long)]
    tol: Option<f64>,
    /// Number of refinement levels (overrides [checks] refine).
    #[arg(long)]
    refine: Option<usize>,
    /// Sample stream seed (overrides [checks] seed).
    #[arg(long)]
    seed: Option<u64>,
}

/// Parses the command line and runs the requested command, terminating the
/// process with the documented exit code.
pub fn run() -> ! {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Wave(args) => cmd_wave(&args),
        Command::Quadratic(args) => cmd_quadratic(&args),
        Command::CheckNoether(args) => cmd_check_noether(&args),
        Command::KernelDim { k, n } => cmd_kernel_dim(k, n),
        Command::HdwResidual(args) => cmd_hdw_residual(&args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(error) => {
            eprintln!("error: {error}");
            std::process::exit(2);
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    system: SystemConfig,
    grid: GridConfig,
    #[serde(default)]
    checks: ChecksConfig,
    #[serde(default)]
    field: Option<FieldConfig>,
    #[serde(default)]
    sample_box: SampleBoxConfig,
    #[serde(default)]
    output: OutputConfig,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SystemConfig {
    Wave {
        sigma: f64,
        tau: f64,
        spatial_dims: usize,
        #[serde(default)]
        profile: ProfileConfig,
    },
    Quadratic {
        /// Constant metric blocks g_1..g_k, each an n x n row-major matrix.
        metrics: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        potential: PotentialConfig,
        #[serde(default)]
        profile: ProfileConfig,
    },
}

#[derive(Deserialize, Clone)]
#[serde(deny_unknown_fields)]
struct ProfileConfig {
    /// One of: plane, standing, gaussian.
    #[serde(default = "default_profile_name")]
    name: String,
    #[serde(default = "default_one")]
    amplitude: f64,
    #[serde(default = "default_one")]
    wavenumber: f64,
    /// Bump center (gaussian); defaults to each axis midpoint.
    center: Option<f64>,
    /// Bump width (gaussian); defaults to a tenth of each axis span.
    width: Option<f64>,
}

fn default_profile_name() -> String {
    "plane".into()
}

fn default_one() -> f64 {
    1.0
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            name: default_profile_name(),
            amplitude: 1.0,
            wavenumber: 1.0,
            center: None,
            width: None,
        }
    }
}

#[derive(Deserialize, Clone, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum PotentialConfig {
    #[default]
    Zero,
    /// V = strength/2 * |q|^2.
    Isotropic { strength: f64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridConfig {
    axes: Vec<AxisConfig>,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct AxisConfig {
    start: f64,
    stop: f64,
    nodes: usize,
    boundary: BoundaryConfig,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum BoundaryConfig {
    Periodic,
    Dirichlet,
}

impl From<BoundaryConfig> for Boundary {
    fn from(value: BoundaryConfig) -> Self {
        match value {
            BoundaryConfig::Periodic => Boundary::Periodic,
            BoundaryConfig::Dirichlet => Boundary::Dirichlet,
        }
    }
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields, default)]
struct ChecksConfig {
    /// Pointwise tolerance for algebraic/symmetry checks.
    tol: f64,
    /// Tolerance for grid-resolution-limited residuals.
    field_tol: f64,
    /// Number of refinement levels for convergence studies.
    refine: usize,
    /// Seed of the deterministic sample stream.
    seed: u64,
    /// Number of sampled phase-space points.
    samples: usize,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            field_tol: 1e-3,
            refine: 3,
            seed: 0,
            samples: 256,
        }
    }
}

#[derive(Deserialize, Clone)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum FieldConfig {
    /// Constant configuration field with the given components.
    Translation { direction: Vec<f64> },
    /// Rotation generator in the (i, j) configuration plane (zero-based).
    Rotation { plane: [usize; 2] },
    /// Linear configuration field q -> matrix q + offset.
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
    /// The distinguished base-direction field (never a symmetry candidate
    /// that passes: its eta pairing is 1).
    Reeb { axis: usize },
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields, default)]
struct SampleBoxConfig {
    t_half: f64,
    q_half: f64,
    p_half: f64,
}

impl Default for SampleBoxConfig {
    fn default() -> Self {
        Self {
            t_half: 1.0,
            q_half: 1.0,
            p_half: 1.0,
        }
    }
}

#[derive(Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
struct OutputConfig {
    dir: Option<PathBuf>,
}

/// Effective settings after flag overrides and validation.
struct Settings {
    config: RunConfig,
    out_dir: PathBuf,
    tol: f64,
    field_tol: f64,
    refine: usize,
    seed: u64,
    samples: usize,
}

fn load_settings(args: &RunArgs) -> Result<Settings> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", args.config.display())))?;
    let config: RunConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    let checks = config.checks;
    let tol = args.tol.unwrap_or(checks.tol);
    let field_tol = checks.field_tol;
    let refine = args.refine.unwrap_or(checks.refine);
    let seed = args.seed.unwrap_or(checks.seed);
    let samples = checks.samples;
    let tol_ok = tol.is_finite() && tol > 0.0;
    if !tol_ok {
        return Err(Error::Config(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let field_tol_ok = field_tol.is_finite() && field_tol > 0.0;
    if !field_tol_ok {
        return Err(Error::Config(format!(
            "field tolerance must be positive, got {field_tol}"
        )));
    }
    if refine == 0 {
        return Err(Error::Config("refine must be at least 1".into()));
    }
    if samples == 0 {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Settings {
        config,
        out_dir,
        tol,
        field_tol,
        refine,
        seed,
        samples,
    })
}

/// The config grid with every spacing halved `level` times (node counts
/// double on periodic axes and double-minus-one on Dirichlet axes, so the
/// extents and the Courant ratio are preserved exactly).
fn grid_at_level(axes: &[AxisConfig], level: usize) -> Result<BaseGrid> {
    let factor = 1usize << level;
    let specs = axes
        .iter()
        .map(|axis| {
            let nodes = match axis.boundary {
                BoundaryConfig::Periodic => axis.nodes * factor,
                BoundaryConfig::Dirichlet => (axis.nodes - 1) * factor + 1,
            };
            AxisSpec::new(axis.start, axis.stop, nodes, axis.boundary.into())
        })
        .collect::<Result<Vec<_>>>()?;
    BaseGrid::new(specs)
}

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

/// Closed-form field value at evolution time t and spatial coordinates x.
type OracleFn = Arc<dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync>;

/// Scalar initial displacement/velocity over the spatial coordinates.
struct Profile {
    displacement: ConfigFn<f64>,
    velocity: ConfigFn<f64>,
    /// Closed-form solution of the wave system for this profile, if any.
    oracle: Option<OracleFn>,
}

/// Builds a profile for the wave system with the given speed; spatial axes
/// are used for the gaussian defaults.
fn build_profile(
    profile: &ProfileConfig,
    speed: f64,
    spatial_axes: &[AxisConfig],
) -> Result<Profile> {
    let amplitude = profile.amplitude;
    let wavenumber = profile.wavenumber;
    match profile.name.as_str() {
        "plane" => {
            // psi(t, x) = A sin(kappa (x_1 - c t)).
            let displacement = move |x: &DVector<f64>| amplitude * (wavenumber * x[0]).sin();
            let velocity =
                move |x: &DVector<f64>| -speed * wavenumber * amplitude * (wavenumber * x[0]).cos();
            let oracle =
                move |t: f64, x: &DVector<f64>| amplitude * (wavenumber * (x[0] - speed * t)).sin();
            Ok(Profile {
                displacement: Arc::new(displacement),
                velocity: Arc::new(velocity),
                oracle: Some(Arc::new(oracle)),
            })
        }
        "standing" => {
            // psi(t, x) = A sin(kappa x_1) cos(kappa c t).
            let displacement = move |x: &DVector<f64>| amplitude * (wavenumber * x[0]).sin();
            let oracle = move |t: f64, x: &DVector<f64>| {
                amplitude * (wavenumber * x[0]).sin() * (wavenumber * speed * t).cos()
            };
            Ok(Profile {
                displacement: Arc::new(displacement),
                velocity: Arc::new(|_x: &DVector<f64>| 0.0),
                oracle: Some(Arc::new(oracle)),
            })
        }
        "gaussian" => {
            let centers: Vec<f64> = spatial_axes
                .iter()
                .map(|a| profile.center.unwrap_or(0.5 * (a.start + a.stop)))
                .collect();
            let widths: Vec<f64> = spatial_axes
                .iter()
                .map(|a| profile.width.unwrap_or(0.1 * (a.stop - a.start)))
                .collect();
            if !widths.iter().all(|w| *w > 0.0) {
                return Err(Error::Config("gaussian width must be positive".into()));
            }
            let displacement = move |x: &DVector<f64>| {
                let exponent: f64 = x
                    .iter()
                    .zip(centers.iter().zip(&widths))
                    .map(|(xi, (c, w))| -(xi - c) * (xi - c) / (2.0 * w * w))
                    .sum();
                amplitude * exponent.exp()
            };
            Ok(Profile {
                displacement: Arc::new(displacement),
                velocity: Arc::new(|_x: &DVector<f64>| 0.0),
                oracle: None,
            })
        }
        other => Err(Error::Config(format!(
            "unknown profile {other:?}; expected plane, standing or gaussian"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct CheckLine {
    name: String,
    residual: f64,
    tol: f64,
}

impl CheckLine {
    fn passed(&self) -> bool {
        self.residual.is_finite() && self.residual <= self.tol
    }
}

#[derive(Default)]
struct Report {
    info: Vec<String>,
    checks: Vec<CheckLine>,
}

impl Report {
    fn info(&mut self, line: impl Into<String>) {
        self.info.push(line.into());
    }

    fn check(&mut self, name: impl Into<String>, residual: f64, tol: f64) {
        self.checks.push(CheckLine {
            name: name.into(),
            residual,
            tol,
        });
    }

    fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckLine::passed)
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.info {
            let _ = writeln!(out, "# {line}");
        }
        for check in &self.checks {
            let verdict = if check.passed() { "pass" } else { "fail" };
            let _ = writeln!(
                out,
                "check={} residual={:.6e} tol={:.6e} verdict={verdict}",
                check.name, check.residual, check.tol
            );
        }
        let _ = writeln!(
            out,
            "overall={}",
            if self.all_passed() { "pass" } else { "fail" }
        );
        out
    }

    /// Prints the report, writes it into the output directory, and returns
    /// the documented exit code.
    fn finish(&self, out_dir: &Path) -> Result<i32> {
        let text = self.render();
        print!("{text}");
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("report.txt"), &text)?;
        Ok(if self.all_passed() { 0 } else { 1 })
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_wave(args: &RunArgs) -> Result<i32> {
    let settings = load_settings(args)?;
    let SystemConfig::Wave {
        sigma,
        tau,
        spatial_dims,
        ref profile,
    } = settings.config.system
    else {
        return Err(Error::Config(
            "the wave command needs [system] kind = \"wave\"".into(),
        ));
    };
    let axes = &settings.config.grid.axes;
    if axes.len() != spatial_dims + 1 {
        return Err(Error::Config(format!(
            "{} grid axes configured but {spatial_dims} spatial dimensions need {}",
            axes.len(),
            spatial_dims + 1
        )));
    }
    let speed = (tau / sigma).sqrt();
    let profile = build_profile(profile, speed, &axes[1..])?;
    let all_spatial_periodic = axes[1..]
        .iter()
        .all(|a| matches!(a.boundary, BoundaryConfig::Periodic));

    let dims = Dimensions::new(spatial_dims + 1, 1)?;
    let translation = BaseVectorField::translation(dims, DVector::from_element(1, 1.0))?;
    let current = conserved_from_killing(&translation);

    let mut report = Report::default();
    report.info(format!("command=wave seed={}", settings.seed));
    report.info(format!(
        "sigma={sigma} tau={tau} speed={speed} profile={}",
        profile_name(&settings.config.system)
    ));

    let mut div_maxima = Vec::new();
    let mut oracle_errors = Vec::new();
    let mut finest: Option<SectionGrid> = None;
    let mut finest_force = f64::NAN;
    let mut finest_velocity = f64::NAN;
    for level in 0..settings.refine {
        let grid = grid_at_level(axes, level)?;
        let displacement = profile.displacement.clone();
        let velocity = profile.velocity.clone();
        let params = WaveParams::new(
            sigma,
            tau,
            spatial_dims,
            move |x| displacement(x),
            move |x| velocity(x),
        )?;
        let section = integrate_wave(&params, &grid)?;
        let div = divergence(&current, &section)?;
        let (force, velocity_res) = hdw_residual_on_section(&params.hamiltonian()?, &section)?;
        report.info(format!(
            "level={level} nodes={} div_max={:.6e} force_max={:.6e}",
            grid.node_count(),
            div.max_abs(),
            force.max_abs()
        ));
        div_maxima.push(div.max_abs());
        finest_force = force.max_abs();
        finest_velocity = velocity_res.max_abs();
        if let Some(oracle) = &profile.oracle {
            if all_spatial_periodic {
                let mut worst = 0.0_f64;
                for node in 0..grid.node_count() {
                    let c = grid.node_coords(node);
                    let x = c.rows(1, spatial_dims).into_owned();
                    worst = worst.max((section.psi_component(node, 0) - oracle(c[0], &x)).abs());
                }
                oracle_errors.push(worst);
            }
        }
        finest = Some(section);
    }

    for (i, pair) in div_maxima.windows(2).enumerate() {
        let ratio = pair[0] / pair[1];
        report.check(format!("div_ratio_{}", i + 1), (ratio - 4.0).abs(), 0.4);
    }
    report.check(
        "div_max",
        *div_maxima.last().expect("refine >= 1"),
        settings.field_tol,
    );
    report.check("hdw_force", finest_force, settings.field_tol);
    report.check("hdw_velocity", finest_velocity, settings.tol);
    if oracle_errors.is_empty() {
        report.info("no closed-form oracle for this profile/boundary combination");
    } else {
        for (i, pair) in oracle_errors.windows(2).enumerate() {
            let ratio = pair[0] / pair[1];
            report.check(format!("oracle_ratio_{}", i + 1), (ratio - 4.0).abs(), 0.4);
        }
        report.check(
            "oracle_error",
            *oracle_errors.last().expect("nonempty"),
            settings.field_tol,
        );
    }

    std::fs::create_dir_all(&settings.out_dir)?;
    write_csv(
        finest.as_ref().expect("refine >= 1"),
        &settings.out_dir.join("section.csv"),
    )?;
    report.finish(&settings.out_dir)
}

fn profile_name(system: &SystemConfig) -> &str {
    match system {
        SystemConfig::Wave { profile, .. } | SystemConfig::Quadratic { profile, .. } => {
            &profile.name
        }
    }
}

fn quadratic_from_config(
    metrics: &[Vec<Vec<f64>>],
    potential: &PotentialConfig,
) -> Result<QuadraticHamiltonian> {
    if metrics.is_empty() {
        return Err(Error::Config("metrics list cannot be empty".into()));
    }
    let n = metrics[0].len();
    let mut blocks = Vec::with_capacity(metrics.len());
    for rows in metrics {
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("every metric block must be {n}x{n}")));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        blocks.push(DMatrix::from_row_slice(n, n, &flat));
    }
    let dims = Dimensions::new(metrics.len(), n)?;
    let potential = match potential {
        PotentialConfig::Zero => Potential::zero(),
        PotentialConfig::Isotropic { strength } => {
            let s = *strength;
            Potential::new(move |_t: &DVector<f64>, q: &DVector<f64>| 0.5 * s * q.norm_squared())
                .with_partials(move |t: &DVector<f64>, q: &DVector<f64>| {
                    (DVector::zeros(t.len()), s * q)
                })
        }
    };
    QuadraticHamiltonian::new(dims, MetricFamily::constant(blocks), potential)
}

fn cmd_quadratic(args: &RunArgs) -> Result<i32> {
    let settings = load_settings(args)?;
    let SystemConfig::Quadratic {
        ref metrics,
        ref potential,
        ref profile,
    } = settings.config.system
    else {
        return Err(Error::Config(
            "the quadratic command needs [system] kind = \"quadratic\"".into(),
        ));
    };
    let hamiltonian = quadratic_from_config(metrics, potential)?;
    let dims = hamiltonian.dims();
    let axes = &settings.config.grid.axes;
    if axes.len() != dims.k {
        return Err(Error::Config(format!(
            "{} grid axes configured but the system has k = {}",
            axes.len(),
            dims.k
        )));
    }
    // The scalar profile seeds component 0 at rest; other components start
    // at zero.
    let profile = build_profile(profile, 0.0, &axes[1..])?;
    let n = dims.n;
    let displacement = profile.displacement.clone();
    let initial = InitialData::from_functions(
        move |x: &DVector<f64>| {
            let mut v = DVector::zeros(n);
            v[0] = displacement(x);
            v
        },
        move |_x: &DVector<f64>| DVector::zeros(n),
    );

    let mut report = Report::default();
    report.info(format!("command=quadratic seed={}", settings.seed));
    report.info(format!("k={} n={}", dims.k, dims.n));

    let grid = grid_at_level(axes, 0)?;
    let section = integrate_quadratic(&hamiltonian, &grid, &initial)?;
    let (force, velocity) = hdw_residual_on_section(&hamiltonian, &section)?;
    report.check("hdw_force", force.max_abs(), settings.field_tol);
    report.check("hdw_velocity", velocity.max_abs(), settings.tol);

    // Pointwise solution-field residual at sampled phase-space points.
    let sample_box = SampleBox::centered(
        dims,
        settings.config.sample_box.t_half,
        settings.config.sample_box.q_half,
        settings.config.sample_box.p_half,
    );
    let samples = sample_points(dims, &sample_box, settings.samples, settings.seed);
    let solution = build_hdw(Arc::new(hamiltonian.clone()), HdwGauge::Symmetric)?;
    let mut worst = 0.0_f64;
    for x in &samples {
        let (eta_block, covector) = solution.residual(x);
        worst = worst.max(eta_block.amax()).max(covector.norm_inf());
    }
    report.check("hdw_pointwise", worst, settings.tol);

    std::fs::create_dir_all(&settings.out_dir)?;
    write_csv(&section, &settings.out_dir.join("section.csv"))?;
    report.finish(&settings.out_dir)
}

/// The Hamiltonian described by the [system] table, for commands that accept
/// either kind.
fn hamiltonian_from_system(system: &SystemConfig) -> Result<QuadraticHamiltonian> {
    match system {
        SystemConfig::Wave {
            sigma,
            tau,
            spatial_dims,
            ..
        } => WaveParams::new(*sigma, *tau, *spatial_dims, |_x| 0.0, |_x| 0.0)?.hamiltonian(),
        SystemConfig::Quadratic {
            metrics, potential, ..
        } => quadratic_from_config(metrics, potential),
    }
}

fn cmd_check_noether(args: &RunArgs) -> Result<i32> {
    let settings = load_settings(args)?;
    let hamiltonian = hamiltonian_from_system(&settings.config.system)?;
    let dims = hamiltonian.dims();
    let field = settings
        .config
        .field
        .clone()
        .ok_or_else(|| Error::Config("check-noether needs a [field] table".into()))?;

    // Build the candidate: configuration fields are lifted, the Reeb field
    // is used as-is (it is the canonical failing candidate).
    let (candidate, base_field): (PhaseVectorField, Option<BaseVectorField>) = match field {
        FieldConfig::Translation { direction } => {
            let base = BaseVectorField::translation(dims, DVector::from_vec(direction))?;
            (complete_lift(&base), Some(base))
        }
        FieldConfig::Rotation { plane } => {
            let base = BaseVectorField::rotation(dims, plane[0], plane[1])?;
            (complete_lift(&base), Some(base))
        }
        FieldConfig::Linear { matrix, offset } => {
            if matrix.len() != dims.n || matrix.iter().any(|r| r.len() != dims.n) {
                return Err(Error::Config(format!(
                    "linear field matrix must be {0}x{0}",
                    dims.n
                )));
            }
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            let offset = match offset {
                Some(o) => {
                    if o.len() != dims.n {
                        return Err(Error::Config(format!(
                            "linear field offset must have {} components",
                            dims.n
                        )));
                    }
                    DVector::from_vec(o)
                }
                None => DVector::zeros(dims.n),
            };
            let base = BaseVectorField::linear(
                dims,
                DMatrix::from_row_slice(dims.n, dims.n, &flat),
                offset,
            )?;
            (complete_lift(&base), Some(base))
        }
        FieldConfig::Reeb { axis } => (PhaseVectorField::reeb_field(dims, axis)?, None),
    };

    let sample_box = SampleBox::centered(
        dims,
        settings.config.sample_box.t_half,
        settings.config.sample_box.q_half,
        settings.config.sample_box.p_half,
    );
    let samples = sample_points(dims, &sample_box, settings.samples, settings.seed);

    let mut report = Report::default();
    report.info(format!(
        "command=check-noether seed={} samples={}",
        settings.seed, settings.samples
    ));
    let noether = noether_check(&candidate, &hamiltonian, &samples, settings.tol)?;
    report.check("noether_omega", noether.residual_omega, settings.tol);
    report.check("noether_eta", noether.residual_eta, settings.tol);
    report.check(
        "noether_hamiltonian",
        noether.residual_hamiltonian,
        settings.tol,
    );
    report.info(format!(
        "exact_residual={:.6e} reeb_commutator_residual={:.6e}",
        noether.exact_residual, noether.residual_reeb
    ));
    if let Some(base) = &base_field {
        let qs: Vec<DVector<f64>> = samples.iter().map(|x| x.q.clone()).collect();
        let killing = killing_check(base, hamiltonian.metrics(), &qs, settings.tol)?;
        report.check("killing", killing.residual, settings.tol);
    }

    std::fs::create_dir_all(&settings.out_dir)?;
    if noether.passed() {
        let current = conserved_from_noether(&candidate, &noether, &ChartPoint::zero(dims))?;
        write_current_csv(&current, &samples, &settings.out_dir.join("current.csv"))?;
        report.info("current values written to current.csv");
    }
    report.finish(&settings.out_dir)
}

/// Writes the current's components at the sampled points: coordinates first,
/// then F^1..F^k.
fn write_current_csv(
    current: &crate::symmetry::ConservedCurrent,
    samples: &[ChartPoint],
    path: &Path,
) -> Result<()> {
    use std::io::Write as IoWrite;
    let dims = current.dims();
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = Vec::new();
    for a in 1..=dims.k {
        header.push(format!("t{a}"));
    }
    for i in 1..=dims.n {
        header.push(format!("q{i}"));
    }
    for a in 1..=dims.k {
        for i in 1..=dims.n {
            header.push(format!("p{a}_{i}"));
        }
    }
    for a in 1..=dims.k {
        header.push(format!("F{a}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for x in samples {
        let f = current.components(x)?;
        let mut row = Vec::new();
        for v in x.flatten().iter() {
            row.push(format!("{v}"));
        }
        for v in f.iter() {
            row.push(format!("{v}"));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_kernel_dim(k: i64, n: i64) -> Result<i32> {
    if k < 1 || n < 1 {
        return Err(Error::Config(format!(
            "k and n must be positive integers, got k={k}, n={n}"
        )));
    }
    let dims = Dimensions::new(k as usize, n as usize)?;
    let computed = kernel_dimension(dims, RANK_TOL)?;
    let closed = closed_form_kernel_dimension(dims);
    println!("{computed} {closed}");
    Ok(if computed == closed { 0 } else { 1 })
}

fn cmd_hdw_residual(args: &RunArgs) -> Result<i32> {
    let settings = load_settings(args)?;
    let hamiltonian = hamiltonian_from_system(&settings.config.system)?;
    let dims = hamiltonian.dims();

    let mut report = Report::default();
    report.info(format!(
        "command=hdw-residual seed={} samples={}",
        settings.seed, settings.samples
    ));

    // Pointwise: the solution field built from the Hamiltonian satisfies the
    // geometric equations at sampled points, and the two gauges differ by a
    // kernel element.
    let sample_box = SampleBox::centered(
        dims,
        settings.config.sample_box.t_half,
        settings.config.sample_box.q_half,
        settings.config.sample_box.p_half,
    );
    let samples = sample_points(dims, &sample_box, settings.samples, settings.seed);
    let symmetric = build_hdw(Arc::new(hamiltonian.clone()), HdwGauge::Symmetric)?;
    let concentrated = build_hdw(Arc::new(hamiltonian.clone()), HdwGauge::Concentrated(0))?;
    let mut worst = 0.0_f64;
    let mut worst_kernel = 0.0_f64;
    for x in &samples {
        let (eta_block, covector) = symmetric.residual(x);
        worst = worst.max(eta_block.amax()).max(covector.norm_inf());
        let difference = symmetric.eval(x).difference(&concentrated.eval(x))?;
        worst_kernel = worst_kernel.max(crate::chart::kernel_membership_residual(&difference));
    }
    report.check("hdw_pointwise", worst, settings.tol);
    report.check("gauge_kernel", worst_kernel, settings.tol);

    // On-grid: integrate the configured system at the finest refinement
    // level and measure the first-order residual fields.
    let axes = &settings.config.grid.axes;
    if axes.len() != dims.k {
        return Err(Error::Config(format!(
            "{} grid axes configured but the system has k = {}",
            axes.len(),
            dims.k
        )));
    }
    let grid = grid_at_level(axes, settings.refine - 1)?;
    report.info(format!(
        "grid level={} nodes={}",
        settings.refine - 1,
        grid.node_count()
    ));
    let section = match &settings.config.system {
        SystemConfig::Wave {
            sigma,
            tau,
            spatial_dims,
            profile,
        } => {
            let speed = (tau / sigma).sqrt();
            let profile = build_profile(profile, speed, &axes[1..])?;
            let displacement = profile.displacement.clone();
            let velocity = profile.velocity.clone();
            let params = WaveParams::new(
                *sigma,
                *tau,
                *spatial_dims,
                move |x| displacement(x),
                move |x| velocity(x),
            )?;
            integrate_wave(&params, &grid)?
        }
        SystemConfig::Quadratic { profile, .. } => {
            let profile = build_profile(profile, 0.0, &axes[1..])?;
            let n = dims.n;
            let displacement = profile.displacement.clone();
            let initial = InitialData::from_functions(
                move |x: &DVector<f64>| {
                    let mut v = DVector::zeros(n);
                    v[0] = displacement(x);
                    v
                },
                move |_x: &DVector<f64>| DVector::zeros(n),
            );
            integrate_quadratic(&hamiltonian, &grid, &initial)?
        }
    };
    let (force, velocity) = hdw_residual_on_section(&hamiltonian, &section)?;
    report.check("hdw_force", force.max_abs(), settings.field_tol);
    report.check("hdw_velocity", velocity.max_abs(), settings.tol);

    std::fs::create_dir_all(&settings.out_dir)?;
    write_csv(&section, &settings.out_dir.join("section.csv"))?;
    report.finish(&settings.out_dir)
}
