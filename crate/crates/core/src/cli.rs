//! The `tprim` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::depth::fuse_depth;
use crate::error::{Error, Result};
use crate::fitting::{fit, write_trace_csv, FitOptions, GradientMode, DEFAULT_LAMBDA};
use crate::geometry::{CylindricalSpec, Vec3};
use crate::io::{
    read_depth_file, read_grid_file, read_points, read_scene_file, write_depth_file, write_grid_file, write_ply,
    write_points, write_scene_file, SceneFile,
};
use crate::metrics::{
    class_table, confusion, range_masked_eval, reports_to_csv, RangeMode, RADIUS_SWEEP, SECTOR_BANDS,
};
use crate::scene::{splat, GridSpec, SemanticGrid};
use crate::skeleton::{cylindrical_partition, skeleton_merge, split_budget, PointSource};
use crate::synthetic::{generate, Preset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tprim", version, about = "Student-t primitives splatted into semantic occupancy grids")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Splat a scene file into a grid file.
    Splat(SplatArgs),
    /// Fit a scene to a target label grid.
    Fit(FitArgs),
    /// Compare a predicted grid against ground truth.
    Eval(EvalArgs),
    /// Pick lidar and camera anchors from two point clouds.
    MergeSkeleton(MergeArgs),
    /// Fuse a camera depth map with a lidar depth map.
    FuseDepth(FuseArgs),
    /// Write a preset scene and its label grid.
    GenSynthetic(SynthArgs),
    /// Export occupied voxels as an ASCII PLY point cloud.
    ExportPly(PlyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Voxel counts as XxYxZ.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<[usize; 3]>,
    /// Grid minimum corner as x,y,z.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub origin: Option<Vec3>,
    /// Grid size as x,y,z.
    #[arg(long, value_parser = parse_vec3)]
    pub extent: Option<Vec3>,
}

impl GridArgs {
    /// Overrides applied on top of the 200×200×16 occupancy grid.
    pub fn spec(&self) -> Result<GridSpec> {
        let d = GridSpec::occupancy_default();
        GridSpec::new(self.origin.unwrap_or(d.origin), self.extent.unwrap_or(d.extent), self.dims.unwrap_or(d.dims))
    }
}

#[derive(Debug, Args)]
pub struct SplatArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Write per-class probabilities instead of labels.
    #[arg(long)]
    pub prob: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    /// Ignore unknown keys in the scene file.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub init: PathBuf,
    /// Label grid file; its header fixes the grid spec.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// CSV loss trace (iteration,lovasz,bce,total).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub step_size: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    /// Use central finite differences instead of analytic gradients.
    #[arg(long)]
    pub finite_difference: bool,
    #[arg(long, default_value_t = 1e-4)]
    pub fd_epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Move initial centers by ±JITTER voxels per axis.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Keep ν fixed instead of re-estimating it every iteration.
    #[arg(long)]
    pub fixed_dof: bool,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    Radius,
    Sector,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Restrict to horizontal distance < R (repeatable).
    #[arg(long)]
    pub radius: Vec<f64>,
    /// Restrict to LO ≤ distance < HI, given as LO-HI (repeatable).
    #[arg(long, value_parser = parse_sector)]
    pub sector: Vec<(f64, f64)>,
    /// Standard radius (20..50 m) or sector (0-10..40-50 m) sweep.
    #[arg(long, value_enum)]
    pub sweep: Option<Sweep>,
    /// Ego position for range masks.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,0,0")]
    pub ego: Vec3,
    /// Also print the per-class table.
    #[arg(long)]
    pub classes: bool,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Lidar points, one `x y z` per line.
    #[arg(long)]
    pub lidar: PathBuf,
    /// Camera pseudo points, one `x y z` per line.
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Total anchor budget M + N.
    #[arg(long, default_value_t = 400)]
    pub anchors: usize,
    /// Lidar:camera split of the budget.
    #[arg(long, value_parser = parse_ratio, default_value = "3:1")]
    pub ratio: (usize, usize),
    #[arg(long, default_value_t = 5.0)]
    pub range_filter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed_index: usize,
    /// Cylindrical bins as R x THETA x Z.
    #[arg(long, value_parser = parse_dims, default_value = "100x360x16")]
    pub bins: [usize; 3],
    /// Radius range as lo,hi.
    #[arg(long, value_parser = parse_pair, default_value = "0,50")]
    pub r_range: (f64, f64),
    /// Height range as lo,hi.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, default_value = "-5,3")]
    pub z_range: (f64, f64),
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub cam: PathBuf,
    #[arg(long)]
    pub lidar: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_preset)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scene file to write.
    #[arg(long)]
    pub scene_out: PathBuf,
    /// Label grid to write.
    #[arg(long)]
    pub grid_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlyArgs {
    /// Grid file to export.
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    pub grid: Option<PathBuf>,
    /// Scene file to splat and export.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[command(flatten)]
    pub spec: GridArgs,
    #[arg(long, short)]
    pub out: PathBuf,
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("expected AxBxC, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("bad dimension {p:?}"))?;
        if *o == 0 {
            return Err("dimensions must be >= 1".into());
        }
    }
    Ok(out)
}

fn parse_floats(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number {p:?}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        return Err(format!("expected {n} comma-separated finite numbers, got {s:?}"));
    }
    Ok(v)
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let v = parse_floats(s, 3)?;
    Ok(Vec3::new(v[0], v[1], v[2]))
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let v = parse_floats(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_sector(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once('-').ok_or_else(|| format!("expected LO-HI, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad number {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad number {hi:?}"))?;
    Ok((lo, hi))
}

fn parse_ratio(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected M:N, got {s:?}"))?;
    Ok((
        a.trim().parse().map_err(|_| format!("bad ratio {s:?}"))?,
        b.trim().parse().map_err(|_| format!("bad ratio {s:?}"))?,
    ))
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) => EXIT_USAGE,
        Error::Format(_) | Error::Io(_) => EXIT_FORMAT,
        Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Format(format!("{}: {io}", path.display())),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?))
}

fn cmd_splat(a: &SplatArgs) -> Result<()> {
    let spec = a.grid.spec()?;
    let scene = with_path(&a.scene, read_scene_file(&a.scene, !a.lenient))?.to_scene()?;
    let grid = splat(&scene, &spec, a.threshold)?;
    let grid = if a.prob { grid } else { grid.to_labels() };
    write_grid_file(&a.out, &grid)
}

fn cmd_fit(a: &FitArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let file = with_path(&a.init, read_scene_file(&a.init, !a.lenient))?;
    let init = file.to_scene()?;
    let target = with_path(&a.target, read_grid_file(&a.target))?;
    let target = if target.is_labels() { target } else { target.to_labels() };
    let opts = FitOptions {
        iterations: a.iterations,
        step_size: a.step_size,
        lambda: a.lambda,
        threshold: a.threshold,
        gradient_mode: if a.finite_difference { GradientMode::FiniteDifference } else { GradientMode::Analytic },
        fd_epsilon: a.fd_epsilon,
        rng_seed: a.seed,
        init_jitter: a.jitter,
        refresh_dof: !a.fixed_dof,
        ..FitOptions::default()
    };
    let spec = target.spec;
    let result = fit(&init, &target, &spec, &opts)?;
    write_scene_file(&a.out, &SceneFile::from_scene(&result.scene, file.class_names))?;
    if let Some(path) = &a.trace {
        let mut w = create(path)?;
        write_trace_csv(&mut w, &result.trace)?;
        w.flush()?;
    }
    writeln!(out, "initial loss {:.6}, best loss {:.6}", result.trace[0].total, result.best_loss)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let pred = with_path(&a.pred, read_grid_file(&a.pred))?.to_labels();
    let gt = with_path(&a.gt, read_grid_file(&a.gt))?.to_labels();
    let mut modes: Vec<RangeMode> = a.radius.iter().map(|r| RangeMode::Radius(*r)).collect();
    modes.extend(a.sector.iter().map(|(lo, hi)| RangeMode::Sector(*lo, *hi)));
    match a.sweep {
        Some(Sweep::Radius) => modes.extend(RADIUS_SWEEP.iter().map(|r| RangeMode::Radius(*r))),
        Some(Sweep::Sector) => modes.extend(SECTOR_BANDS.iter().map(|(lo, hi)| RangeMode::Sector(*lo, *hi))),
        None => {}
    }
    let counts = confusion(&pred, &gt)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into());
    writeln!(out, "iou {}", fmt(crate::metrics::geometry_iou(&counts)))?;
    writeln!(out, "miou {}", fmt(crate::metrics::miou(&counts)))?;
    if a.classes {
        let names: Vec<String> = (1..=gt.num_classes).map(|c| format!("class {c}")).collect();
        write!(out, "{}", class_table(&counts, &names))?;
    }
    if !modes.is_empty() {
        let reports =
            modes.into_iter().map(|m| range_masked_eval(&pred, &gt, m, &a.ego)).collect::<Result<Vec<_>>>()?;
        write!(out, "{}", reports_to_csv(&reports))?;
    }
    Ok(())
}

fn cmd_merge(a: &MergeArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let spec = CylindricalSpec {
        r_min: a.r_range.0,
        r_max: a.r_range.1,
        z_min: a.z_range.0,
        z_max: a.z_range.1,
        n_r: a.bins[0],
        n_theta: a.bins[1],
        n_z: a.bins[2],
    };
    spec.validate()?;
    let open = |p: &Path, s| -> Result<_> {
        let f = File::open(p).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        with_path(p, read_points(BufReader::new(f), Some(s)))
    };
    let lidar = cylindrical_partition(&open(&a.lidar, PointSource::Lidar)?, &spec)?;
    let camera = cylindrical_partition(&open(&a.camera, PointSource::Camera)?, &spec)?;
    let (m, n) = split_budget(a.anchors, a.ratio)?;
    let m = m.min(lidar.len());
    let merged = skeleton_merge(&lidar, &camera, m, n, a.range_filter, a.seed_index)?;
    let sources: Vec<PointSource> = (0..merged.anchors.len())
        .map(|i| if i < merged.lidar_count { PointSource::Lidar } else { PointSource::Camera })
        .collect();
    let mut w = create(&a.out)?;
    write_points(&mut w, &merged.anchors, Some(&sources))?;
    w.flush()?;
    writeln!(
        out,
        "{} lidar + {} camera anchors ({} camera voxels survived filtering)",
        merged.lidar_count, merged.camera_count, merged.camera_survivors
    )?;
    Ok(())
}

fn cmd_fuse(a: &FuseArgs) -> Result<()> {
    let cam = with_path(&a.cam, read_depth_file(&a.cam))?;
    let lidar = with_path(&a.lidar, read_depth_file(&a.lidar))?;
    write_depth_file(&a.out, &fuse_depth(&cam, &lidar)?)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let case = generate(a.preset, a.seed)?;
    write_scene_file(&a.scene_out, &SceneFile::from_scene(&case.scene, a.preset.class_names()))?;
    write_grid_file(&a.grid_out, &case.labels)
}

fn cmd_ply(a: &PlyArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let grid: SemanticGrid = match (&a.grid, &a.scene) {
        (Some(g), _) => with_path(g, read_grid_file(g))?,
        (None, Some(s)) => splat(&with_path(s, read_scene_file(s, true))?.to_scene()?, &a.spec.spec()?, 1e-3)?,
        (None, None) => return Err(Error::invalid("either --grid or --scene is required")),
    };
    let mut w = create(&a.out)?;
    let n = write_ply(&mut w, &grid)?;
    w.flush()?;
    writeln!(out, "{n} vertices")?;
    Ok(())
}

pub fn run(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    match &cli.command {
        Command::Splat(a) => cmd_splat(a),
        Command::Fit(a) => cmd_fit(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::MergeSkeleton(a) => cmd_merge(a, out),
        Command::FuseDepth(a) => cmd_fuse(a),
        Command::GenSynthetic(a) => cmd_synth(a),
        Command::ExportPly(a) => cmd_ply(a, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::invalid("--threads must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))
            .and_then(|pool| pool.install(|| run(&cli, out))),
        None => run(&cli, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
