//! Command-line interface.
//!
//! Subcommands mirror the pipeline stages (`space`, `cubes`, `calib`,
//! `frame`, `norm`, `verify`, `generate`, `pipeline`). Exit codes: 0 ok,
//! 2 validation failure (including usage errors), 3 numerical failure.
//! `HKFRAME_THREADS` caps the rayon pool.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use serde::Serialize;

use crate::calib::build_calibration;
use crate::cubes::{build_cubes, subcube_grid, verify_cube_axioms, CubeSystem, SampleRule};
use crate::error::{Error, Result};
use crate::frame::{build_synthesis_frame, synthesis, FrameCoefficients};
use crate::generators::{
    binary_tree, cycle, gasket, path as path_graph, random_geometric, torus, GeneratedSpace,
    LaplacianKind,
};
use crate::norms::{
    besov_type_norm, triebel_type_norm, Family, KRangePolicy, NormContext, SpaceParams, Variant,
};
use crate::spectral::SpectralOperator;
use crate::verify::{run_equivalence, Claim, ClaimConfig, VerifyContext};
use crate::workspace::{
    self, load_calibration, load_frame, read_json, run_pipeline, save_calibration, save_frame,
    sha256_file, write_claim_reports, write_json, Manifest, PipelineConfig, SpaceFile,
};

// ---------------------------------------------------------------------------
// argument parsers for domain enums and exponents
// ---------------------------------------------------------------------------

fn parse_exponent(s: &str) -> std::result::Result<f64, String> {
    let v = if s.eq_ignore_ascii_case("inf") {
        f64::INFINITY
    } else {
        s.parse::<f64>().map_err(|e| e.to_string())?
    };
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("exponent must be positive, got `{s}`"))
    }
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    match s {
        "B" | "b" => Ok(Family::B),
        "F" | "f" => Ok(Family::F),
        _ => Err(format!("unknown family `{s}` (expected B or F)")),
    }
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    match s {
        "plain" => Ok(Variant::Plain),
        "tilde" => Ok(Variant::Tilde),
        _ => Err(format!("unknown variant `{s}` (expected plain or tilde)")),
    }
}

fn parse_k_range(s: &str) -> std::result::Result<KRangePolicy, String> {
    match s {
        "full" => Ok(KRangePolicy::Full),
        "nonnegative_only" => Ok(KRangePolicy::NonnegativeOnly),
        _ => Err(format!("unknown level range `{s}` (expected full or nonnegative_only)")),
    }
}

fn parse_laplacian(s: &str) -> std::result::Result<LaplacianKind, String> {
    match s {
        "unnormalized" => Ok(LaplacianKind::Unnormalized),
        "random_walk_symmetrized" => Ok(LaplacianKind::RandomWalkSymmetrized),
        _ => Err(format!(
            "unknown laplacian `{s}` (expected unnormalized or random_walk_symmetrized)"
        )),
    }
}

fn parse_sample_rule(s: &str) -> std::result::Result<SampleRule, String> {
    match s {
        "center" => Ok(SampleRule::Center),
        "min_id" => Ok(SampleRule::MinId),
        "random" => Ok(SampleRule::Random),
        _ => Err(format!("unknown sample rule `{s}` (expected center, min_id, or random)")),
    }
}

fn parse_claim(s: &str) -> std::result::Result<Claim, String> {
    s.parse::<Claim>().map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// command tree
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "hkframe",
    version,
    about = "Heat-kernel frames and Besov/Triebel-type norms on finite metric measure spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate or summarize a space file
    Space {
        #[command(subcommand)]
        cmd: SpaceCmd,
    },
    /// Build or check nested cube systems
    Cubes {
        #[command(subcommand)]
        cmd: CubesCmd,
    },
    /// Build the spectral band calibration
    Calib {
        #[command(subcommand)]
        cmd: CalibCmd,
    },
    /// Build the sampled synthesis frame or test reconstruction
    Frame {
        #[command(subcommand)]
        cmd: FrameCmd,
    },
    /// Evaluate a function-space norm with its breakdown
    Norm(NormArgs),
    /// Run measured norm-equivalence claims
    Verify {
        #[command(subcommand)]
        cmd: VerifyCmd,
    },
    /// Emit a generated example space
    Generate {
        #[command(subcommand)]
        cmd: GenerateCmd,
    },
    /// Run space -> cubes -> calib -> frame -> verify with caching
    Pipeline(PipelineArgs),
}

#[derive(Subcommand)]
enum SpaceCmd {
    /// Parse a space file and check the metric measure axioms
    Validate { file: PathBuf },
    /// Emit the geometry report (doubling constant, dimension, ...)
    Report {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CubesCmd {
    /// Build the nested cube system for a space
    Build {
        space: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check the cube axioms on an existing system
    Verify {
        cubes: PathBuf,
        /// space file; defaults to space.json next to the cube file
        #[arg(long)]
        space: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CalibCmd {
    /// Build band kernels and duals; delta is taken from the cube system
    Build {
        space: PathBuf,
        cubes: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        beta0: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, value_parser = parse_laplacian)]
        laplacian: Option<LaplacianKind>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FrameCmd {
    /// Build the sampled synthesis frame over a subcube grid
    Build {
        calib: PathBuf,
        /// cube system the sampling grid is drawn from
        grid: PathBuf,
        #[arg(long, default_value_t = 1)]
        j0: i64,
        #[arg(long, default_value_t = 0.1)]
        eps0: f64,
        #[arg(long, default_value = "center", value_parser = parse_sample_rule)]
        sample_rule: SampleRule,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze + resynthesize a function and report the residual
    Roundtrip {
        frame: PathBuf,
        /// JSON array of point values
        #[arg(long)]
        f: PathBuf,
        /// calibration file; defaults to calib.bin next to the frame file
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct NormArgs {
    space: PathBuf,
    cubes: PathBuf,
    calib: PathBuf,
    #[arg(long, value_parser = parse_family)]
    family: Family,
    #[arg(long)]
    s: f64,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, default_value = "2", value_parser = parse_exponent)]
    p: f64,
    #[arg(long, default_value = "2", value_parser = parse_exponent)]
    q: f64,
    #[arg(long, default_value = "plain", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value = "full", value_parser = parse_k_range)]
    k_range: KRangePolicy,
    /// JSON array of point values
    #[arg(long)]
    f: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Run every claim against a workspace; one JSON per claim plus a CSV
    All {
        workspace: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long)]
        battery_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a single claim and emit its report
    Claim {
        #[arg(value_parser = parse_claim)]
        claim: Claim,
        workspace: PathBuf,
        #[arg(long)]
        battery_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GenerateCmd {
    /// Cycle graph on n points
    Cycle {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "unnormalized", value_parser = parse_laplacian)]
        laplacian: LaplacianKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Path graph on n points
    Path {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "unnormalized", value_parser = parse_laplacian)]
        laplacian: LaplacianKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// n x m torus grid
    Torus {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value = "unnormalized", value_parser = parse_laplacian)]
        laplacian: LaplacianKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete binary tree of the given depth
    BinaryTree {
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value = "unnormalized", value_parser = parse_laplacian)]
        laplacian: LaplacianKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Level-k Sierpinski gasket graph (carries a beta0 hint)
    Gasket {
        #[arg(long)]
        level: usize,
        #[arg(long, default_value = "unnormalized", value_parser = parse_laplacian)]
        laplacian: LaplacianKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random geometric graph on the unit square
    RandomGeometric {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "unnormalized", value_parser = parse_laplacian)]
        laplacian: LaplacianKind,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PipelineArgs {
    /// source space file
    space: PathBuf,
    /// workspace directory to create or update
    workspace: PathBuf,
    /// JSON file with a full parameter set; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    beta0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    j0: Option<i64>,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    battery_size: Option<usize>,
    #[arg(long, value_parser = parse_laplacian)]
    laplacian: Option<LaplacianKind>,
    #[arg(long, value_parser = parse_sample_rule)]
    sample_rule: Option<SampleRule>,
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

/// Apply the HKFRAME_THREADS cap before any rayon pool exists.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HKFRAME_THREADS") {
        let threads: usize = v.trim().parse().ok().filter(|&k| k > 0).ok_or_else(|| {
            Error::InvalidParams(format!("HKFRAME_THREADS must be a positive integer, got `{v}`"))
        })?;
        // a failure here means a pool already exists; the cap then stays as-is
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    match cli.command {
        Cmd::Space { cmd } => run_space(cmd),
        Cmd::Cubes { cmd } => run_cubes(cmd),
        Cmd::Calib { cmd } => run_calib(cmd),
        Cmd::Frame { cmd } => run_frame(cmd),
        Cmd::Norm(args) => run_norm(args),
        Cmd::Verify { cmd } => run_verify(cmd),
        Cmd::Generate { cmd } => run_generate(cmd),
        Cmd::Pipeline(args) => run_pipeline_cmd(args),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| Error::json("<stdout>".to_string(), e))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn read_function(path: &Path, n: usize) -> Result<Array1<f64>> {
    let values: Vec<f64> = read_json(path)?;
    if values.len() != n {
        return Err(Error::InvalidParams(format!(
            "function file {} lists {} values for a space of {n} points",
            path.display(),
            values.len()
        )));
    }
    Ok(Array1::from_vec(values))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or_else(|| Path::new(".")).join(name)
}

// ---------------------------------------------------------------------------
// per-command drivers
// ---------------------------------------------------------------------------

fn run_space(cmd: SpaceCmd) -> Result<()> {
    match cmd {
        SpaceCmd::Validate { file } => {
            let sf: SpaceFile = read_json(&file)?;
            let space = sf.to_space()?;
            let report = space.geometry_report();
            println!(
                "ok: {} points, diameter {}, total measure {}, doubling dimension {:.4}",
                report.n, report.diameter, report.total_measure, report.dim_d
            );
            Ok(())
        }
        SpaceCmd::Report { file, out } => {
            let sf: SpaceFile = read_json(&file)?;
            let space = sf.to_space()?;
            emit(&space.geometry_report(), out.as_deref())
        }
    }
}

fn run_cubes(cmd: CubesCmd) -> Result<()> {
    match cmd {
        CubesCmd::Build { space, delta, seed, out } => {
            let sf: SpaceFile = read_json(&space)?;
            let space = sf.to_space()?;
            let cubes = build_cubes(&space, delta, seed)?;
            write_json(&out, &cubes)?;
            println!(
                "ok: levels {}..={}, {} written",
                cubes.k_min,
                cubes.k_max,
                out.display()
            );
            Ok(())
        }
        CubesCmd::Verify { cubes, space } => {
            let space_path = space.unwrap_or_else(|| sibling(&cubes, workspace::SPACE_FILE));
            let sf: SpaceFile = read_json(&space_path)?;
            let space = sf.to_space()?;
            let system: CubeSystem = read_json(&cubes)?;
            let report = verify_cube_axioms(&system, &space);
            emit(&report, None)?;
            if !(report.partition_ok && report.nesting_ok && report.c_nat_lower > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "cube axioms violated in {}",
                    cubes.display()
                )));
            }
            Ok(())
        }
    }
}

fn run_calib(cmd: CalibCmd) -> Result<()> {
    match cmd {
        CalibCmd::Build { space, cubes, beta0, alpha, laplacian, out } => {
            let sf: SpaceFile = read_json(&space)?;
            let space = sf.to_space()?;
            let system: CubeSystem = read_json(&cubes)?;
            let l = sf.laplacian(laplacian)?;
            let op = SpectralOperator::new(&space, &l)?;
            let calib = build_calibration(&op, system.delta, beta0, alpha)?;
            save_calibration(&out, &space, &l, &calib)?;
            let crf = calib.verify_crf(20, 0);
            println!(
                "ok: {} bands, reproducing residual {:.3e}, {} written",
                calib.j_max + 1,
                crf.op_norm_residual,
                out.display()
            );
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct RoundtripReport {
    relative_l2_error: f64,
    f_l2_norm: f64,
    total_tail_bound: f64,
    error_bound: f64,
    within_bound: bool,
}

fn run_frame(cmd: FrameCmd) -> Result<()> {
    match cmd {
        FrameCmd::Build { calib, grid, j0, eps0, sample_rule, seed, tol, out } => {
            let (space, _, calib) = load_calibration(&calib)?;
            let system: CubeSystem = read_json(&grid)?;
            let grid = subcube_grid(&system, &space, j0, eps0, sample_rule, seed)?;
            let frame = build_synthesis_frame(&calib, &grid, tol)?;
            save_frame(&out, &frame)?;
            println!(
                "ok: {} levels, eps0 {}, max contraction {:.6}, total tail {:.3e}, {} written",
                frame.levels.len(),
                frame.eps0_effective,
                frame.max_r_norm(),
                frame.total_tail(),
                out.display()
            );
            Ok(())
        }
        FrameCmd::Roundtrip { frame, f, calib, out } => {
            let calib_path = calib.unwrap_or_else(|| sibling(&frame, workspace::CALIB_FILE));
            let frame = load_frame(&frame)?;
            let (_, _, calib) = load_calibration(&calib_path)?;
            let n = calib.op.n();
            let f = read_function(&f, n)?;
            // coefficients come straight off the frame's own sample lists
            let values: Vec<Vec<f64>> = frame
                .levels
                .iter()
                .map(|lf| {
                    let band = calib.band_apply(lf.j, &f);
                    lf.samples.iter().map(|&x| band[x]).collect()
                })
                .collect();
            let coeffs = FrameCoefficients { j_max: frame.j_max, values, n_points: n };
            let rec = synthesis(&coeffs, &frame)?;
            let f_norm = calib.op.l2_norm(&f);
            let err = calib.op.l2_norm(&(&rec - &f));
            let relative = if f_norm > 0.0 { err / f_norm } else { err };
            let bound = (10.0 * frame.total_tail()).max(1e-6);
            let report = RoundtripReport {
                relative_l2_error: relative,
                f_l2_norm: f_norm,
                total_tail_bound: frame.total_tail(),
                error_bound: bound,
                within_bound: relative <= bound,
            };
            emit(&report, out.as_deref())
        }
    }
}

fn run_norm(args: NormArgs) -> Result<()> {
    let sf: SpaceFile = read_json(&args.space)?;
    let space = sf.to_space()?;
    let system: CubeSystem = read_json(&args.cubes)?;
    let (_, _, calib) = load_calibration(&args.calib)?;
    if calib.op.n() != space.n() {
        return Err(Error::InvalidParams(format!(
            "calibration was built on {} points, space has {}",
            calib.op.n(),
            space.n()
        )));
    }
    let ctx = NormContext::new(&space, &system).with_beta0(calib.bumps.beta0);
    let params = SpaceParams::new(args.s, args.tau, args.p, args.q, args.family, args.variant)
        .with_policy(args.k_range);
    let f = read_function(&args.f, space.n())?;
    let breakdown = match args.family {
        Family::B => besov_type_norm(&f, &calib, &ctx, &params)?,
        Family::F => triebel_type_norm(&f, &calib, &ctx, &params)?,
    };
    emit(&breakdown, args.out.as_deref())
}

/// Load the artifacts `verify` needs from a workspace directory, rebuilding
/// the grid from the manifest's parameters (or defaults when no manifest).
struct LoadedWorkspace {
    space: crate::space::MetricMeasureSpace,
    op: SpectralOperator,
    calib: crate::calib::LPCalibration,
    cubes: CubeSystem,
    grid: crate::cubes::SubcubeGrid,
    params: PipelineConfig,
    inputs_sha256: String,
}

fn load_workspace(dir: &Path) -> Result<LoadedWorkspace> {
    let manifest_path = dir.join(workspace::MANIFEST_FILE);
    let params = if manifest_path.exists() {
        read_json::<Manifest>(&manifest_path)?.params
    } else {
        PipelineConfig::default()
    };
    let space_path = dir.join(workspace::SPACE_FILE);
    let cubes_path = dir.join(workspace::CUBES_FILE);
    let calib_path = dir.join(workspace::CALIB_FILE);
    for p in [&space_path, &cubes_path, &calib_path] {
        if !p.exists() {
            return Err(Error::PrerequisiteMissing(p.display().to_string()));
        }
    }
    let sf: SpaceFile = read_json(&space_path)?;
    let space = sf.to_space()?;
    let cubes: CubeSystem = read_json(&cubes_path)?;
    let (_, l, calib) = load_calibration(&calib_path)?;
    let op = SpectralOperator::new(&space, &l)?;
    let grid = subcube_grid(
        &cubes,
        &space,
        params.j0,
        params.eps0,
        params.sample_rule,
        params.seed,
    )?;
    let mut hashes: Vec<String> = Vec::new();
    for p in [&space_path, &cubes_path, &calib_path] {
        hashes.push(sha256_file(p)?);
    }
    let frame_path = dir.join(workspace::FRAME_FILE);
    if frame_path.exists() {
        hashes.push(sha256_file(&frame_path)?);
    }
    let inputs_sha256 = workspace::sha256_bytes(hashes.join("\n").as_bytes());
    Ok(LoadedWorkspace { space, op, calib, cubes, grid, params, inputs_sha256 })
}

fn run_verify(cmd: VerifyCmd) -> Result<()> {
    match cmd {
        VerifyCmd::All { workspace: dir, out, battery_size, seed } => {
            let ws = load_workspace(&dir)?;
            let vctx = VerifyContext {
                space: &ws.space,
                op: &ws.op,
                calib: &ws.calib,
                cubes: &ws.cubes,
                grid: &ws.grid,
            };
            let written = write_claim_reports(
                &vctx,
                battery_size.unwrap_or(ws.params.battery_size),
                seed.unwrap_or(ws.params.seed),
                &ws.inputs_sha256,
                &out,
            )?;
            println!("ok: {} files written to {}", written.len(), out.display());
            Ok(())
        }
        VerifyCmd::Claim { claim, workspace: dir, battery_size, seed, out } => {
            let ws = load_workspace(&dir)?;
            let vctx = VerifyContext {
                space: &ws.space,
                op: &ws.op,
                calib: &ws.calib,
                cubes: &ws.cubes,
                grid: &ws.grid,
            };
            let mut config = ClaimConfig::default_for(claim);
            config.battery_size = battery_size.unwrap_or(ws.params.battery_size);
            config.seed = seed.unwrap_or(ws.params.seed);
            let report = run_equivalence(claim, &vctx, &config)?;
            emit(&report, out.as_deref())
        }
    }
}

fn write_generated(g: &GeneratedSpace, out: &Path) -> Result<()> {
    let sf = SpaceFile::from_generated(g);
    write_json(out, &sf)?;
    println!(
        "ok: {} with {} points, {} edges, {} written",
        g.kind,
        g.n,
        g.edges.len(),
        out.display()
    );
    Ok(())
}

fn run_generate(cmd: GenerateCmd) -> Result<()> {
    match cmd {
        GenerateCmd::Cycle { n, laplacian, out } => write_generated(&cycle(n, laplacian)?, &out),
        GenerateCmd::Path { n, laplacian, out } => write_generated(&path_graph(n, laplacian)?, &out),
        GenerateCmd::Torus { n, m, laplacian, out } => {
            write_generated(&torus(n, m, laplacian)?, &out)
        }
        GenerateCmd::BinaryTree { depth, laplacian, out } => {
            write_generated(&binary_tree(depth, laplacian)?, &out)
        }
        GenerateCmd::Gasket { level, laplacian, out } => {
            write_generated(&gasket(level, laplacian)?, &out)
        }
        GenerateCmd::RandomGeometric { n, radius, seed, laplacian, out } => {
            write_generated(&random_geometric(n, radius, seed, laplacian)?, &out)
        }
    }
}

fn run_pipeline_cmd(args: PipelineArgs) -> Result<()> {
    let mut config: PipelineConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.delta {
        config.delta = v;
    }
    if let Some(v) = args.beta0 {
        config.beta0 = v;
    }
    if let Some(v) = args.alpha {
        config.alpha = v;
    }
    if let Some(v) = args.j0 {
        config.j0 = v;
    }
    if let Some(v) = args.eps0 {
        config.eps0 = v;
    }
    if let Some(v) = args.tol {
        config.tol = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.battery_size {
        config.battery_size = v;
    }
    if args.laplacian.is_some() {
        config.laplacian = args.laplacian;
    }
    if let Some(v) = args.sample_rule {
        config.sample_rule = v;
    }
    let outcome = run_pipeline(&args.space, &args.workspace, &config)?;
    println!("workspace: {}", outcome.dir.display());
    println!("ran: {}", if outcome.ran.is_empty() { "-".into() } else { outcome.ran.join(", ") });
    println!(
        "cached: {}",
        if outcome.cached.is_empty() { "-".into() } else { outcome.cached.join(", ") }
    );
    Ok(())
}
