//! `semloc` command-line front end.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use semloc::baselines::{brute_force_localize, ransac_localize_image, DEFAULT_RANSAC_ITERS};
use semloc::descriptor::{build_descriptor_db, DescriptorDb, GridSpec, Region};
use semloc::estimator::{localize, read_hypotheses, write_hypotheses, LocalizeParams, MapArtifacts, PoseHypothesis};
use semloc::eval::{evaluate_run, EvalCondition};
use semloc::synthworld::{generate_benchmark_set, generate_world, inject_distractors, write_benchmark, BenchmarkManifest, WorldSpec};
use semloc::worldmodel::{cluster_map_points, load_map, load_query, CameraSidecar, MapInstance, DEFAULT_MAP_CLUSTER_RADIUS};
use semloc::Pose2D;

#[derive(Parser, Debug)]
#[command(name = "semloc", version, about = "Global localization in semantic instance maps")]
struct Cli {
    /// JSON settings file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic world and a benchmark set of query images.
    Synth(SynthArgs),
    /// Render the descriptor database of a map.
    BuildDb(BuildDbArgs),
    /// Localize one query image or a whole benchmark set.
    Localize(LocalizeArgs),
    /// Run a comparison method on one query image or a benchmark set.
    Baseline(BaselineArgs),
    /// Score per-sample hypothesis files against a benchmark manifest.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// World specification JSON; built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    min_visible: usize,
    /// Extra map instances per foreground class that queries never see.
    #[arg(long, default_value_t = 0)]
    distractors: usize,
    /// Seed for query pose sampling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct BuildDbArgs {
    /// Benchmark manifest supplying the map, camera and region.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    /// Camera sidecar JSON.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// x_min,y_min,x_max,y_max in meters.
    #[arg(long, value_parser = parse_region)]
    region: Option<Region>,
    #[arg(long, value_parser = positive)]
    stride_m: Option<f64>,
    #[arg(long, value_parser = yaw_step)]
    yaw_step_deg: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct QueryInput {
    /// Map JSON; taken from the manifest in batch mode when omitted.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    db: PathBuf,
    /// Query label image (PGM with a JSON sidecar).
    #[arg(long, conflicts_with = "batch", required_unless_present = "batch")]
    query: Option<PathBuf>,
    /// Benchmark manifest; every sample is processed.
    #[arg(long)]
    batch: Option<PathBuf>,
    /// Output file, or output directory in batch mode.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = unit_interval)]
    bs_threshold: Option<f64>,
    #[arg(long, value_parser = positive)]
    md_px: Option<f64>,
    #[arg(long, value_parser = positive)]
    ms_px: Option<f64>,
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    #[command(flatten)]
    input: QueryInput,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    topn: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Bf,
    Ransac,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[command(flatten)]
    input: QueryInput,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of per-sample hypothesis files named NNNN.json.
    #[arg(long)]
    results: PathBuf,
    /// Report JSON path; the text table goes next to it with a .txt extension.
    #[arg(long)]
    out: PathBuf,
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|e| e.to_string())
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn yaw_step(s: &str) -> std::result::Result<f64, String> {
    let v = positive(s)?;
    if v <= 360.0 {
        Ok(v)
    } else {
        Err(format!("{v} exceeds a full turn"))
    }
}

fn parse_region(s: &str) -> std::result::Result<Region, String> {
    let v: Vec<f64> = s.split(',').map(|p| parse_f64(p.trim())).collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x0, y0, x1, y1] if x0 <= x1 && y0 <= y1 => Ok(Region::new(x0, y0, x1, y1)),
        _ => Err("expected x_min,y_min,x_max,y_max with min <= max".into()),
    }
}

/// Settings file contents. Every field is optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    localize: LocalizeParams,
    grid_h: usize,
    grid_w: usize,
    stride_m: f64,
    yaw_step_deg: f64,
    ransac_iters: usize,
    seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        let g = GridSpec::default();
        Settings {
            localize: LocalizeParams::default(),
            grid_h: g.grid_h,
            grid_w: g.grid_w,
            stride_m: 2.0,
            yaw_step_deg: 30.0,
            ransac_iters: DEFAULT_RANSAC_ITERS,
            seed: 0,
        }
    }
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    fn apply_query_flags(&mut self, q: &QueryInput) {
        let c = &mut self.localize.consistency;
        if let Some(v) = q.bs_threshold {
            c.bs_threshold = v;
        }
        if let Some(v) = q.md_px {
            c.m_d = v;
        }
        if let Some(v) = q.ms_px {
            c.m_s = v;
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j as usize).build_global() {
            tracing::warn!("thread pool already configured: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn init_logging() {
    let level = std::env::var("SEMLOC_LOG")
        .ok()
        .and_then(|v| v.trim().parse::<tracing::Level>().ok())
        .unwrap_or(tracing::Level::ERROR);
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(a, &settings),
        Command::BuildDb(a) => build_db(a, &mut settings),
        Command::Localize(a) => {
            settings.apply_query_flags(&a.input);
            if let Some(n) = a.topn {
                settings.localize.verify.n_hypotheses = n as usize;
            }
            settings.localize.validate()?;
            let p = settings.localize;
            for_each_query(&a.input, |art, q| Ok(localize(art, q, &p)?))
        }
        Command::Baseline(a) => {
            settings.apply_query_flags(&a.input);
            if let Some(n) = a.iters {
                settings.ransac_iters = n as usize;
            }
            if let Some(s) = a.seed {
                settings.seed = s;
            }
            settings.localize.validate()?;
            let p = settings.localize;
            let (iters, seed) = (settings.ransac_iters, settings.seed);
            match a.method {
                Method::Bf => for_each_query(&a.input, |art, q| {
                    let pose = brute_force_localize(art.db, q, p.bottom_cut)?;
                    Ok(vec![single(pose, vec![], 0)])
                }),
                Method::Ransac => for_each_query(&a.input, |art, q| {
                    Ok(ransac_localize_image(art, q, &p, iters, seed)?
                        .map(|o| o.hypothesis)
                        .into_iter()
                        .collect())
                }),
            }
        }
        Command::Eval(a) => eval(a),
    }
}

fn single(pose: Pose2D, correspondences: Vec<semloc::pairpose::Correspondence>, support_count: usize) -> PoseHypothesis {
    PoseHypothesis {
        pose,
        correspondences,
        support_count,
        rank: 1,
    }
}

fn synth(a: SynthArgs, settings: &Settings) -> Result<()> {
    let spec: WorldSpec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading world spec {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing world spec {}", p.display()))?
        }
        None => WorldSpec::default(),
    };
    let world = generate_world(&spec)?;
    let cam = spec.camera.to_camera()?;
    let seed = a.seed.unwrap_or(settings.seed);
    let samples = generate_benchmark_set(&spec, &world, a.samples, a.min_visible, seed)?;
    let map = if a.distractors > 0 {
        inject_distractors(&world, &spec, a.distractors, spec.seed.wrapping_add(1))?
    } else {
        world
    };
    tracing::info!(samples = samples.len(), width = cam.width, height = cam.height, "benchmark generated");
    write_benchmark(&a.out, &spec, &map, &samples)?;
    Ok(())
}

fn build_db(a: BuildDbArgs, settings: &mut Settings) -> Result<()> {
    let manifest = a.manifest.as_ref().map(|p| BenchmarkManifest::load(p).map(|m| (m, base_dir(p)))).transpose()?;
    let map_path = match (&a.map, &manifest) {
        (Some(p), _) => p.clone(),
        (None, Some((m, base))) => base.join(&m.map),
        (None, None) => bail!("build-db needs --map or --manifest"),
    };
    let cam = match (&a.camera, &manifest) {
        (Some(p), _) => CameraSidecar::load(p)?,
        (None, Some((m, _))) => m.camera.to_camera()?,
        (None, None) => bail!("build-db needs --camera or --manifest"),
    };
    let map = load_map(&map_path)?;
    let region = match (a.region, &manifest) {
        (Some(r), _) => r,
        (None, Some((m, _))) => m.region,
        (None, None) => {
            let (lo, hi) = map.xy_bounds().context("map has no geometry to bound the region")?;
            Region::new(lo.x, lo.y, hi.x, hi.y)
        }
    };
    if let Some(s) = a.stride_m {
        settings.stride_m = s;
    }
    if let Some(y) = a.yaw_step_deg {
        settings.yaw_step_deg = y;
    }
    let grid = GridSpec {
        grid_h: settings.grid_h,
        grid_w: settings.grid_w,
        bottom_cut: settings.localize.bottom_cut,
    };
    let db = build_descriptor_db(&map, &cam, &region, settings.stride_m, settings.yaw_step_deg.to_radians(), &grid)?;
    tracing::info!(entries = db.len(), "descriptor database built");
    db.save(&a.out)?;
    Ok(())
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads the map and DB once, then runs `f` on the single query or on every
/// manifest sample, writing one hypothesis file per query.
fn for_each_query<F>(input: &QueryInput, f: F) -> Result<()>
where
    F: Fn(&MapArtifacts, &semloc::QueryImage) -> Result<Vec<PoseHypothesis>> + Sync,
{
    let manifest = input.batch.as_ref().map(|p| BenchmarkManifest::load(p).map(|m| (m, base_dir(p)))).transpose()?;
    let map_path = match (&input.map, &manifest) {
        (Some(p), _) => p.clone(),
        (None, Some((m, base))) => base.join(&m.map),
        (None, None) => bail!("--map is required for a single query"),
    };
    let map = load_map(&map_path)?;
    let instances: Vec<MapInstance> = cluster_map_points(&map, DEFAULT_MAP_CLUSTER_RADIUS);
    let db = DescriptorDb::load(&input.db)?;
    let art = MapArtifacts {
        instances: &instances,
        db: &db,
    };
    match (&input.query, manifest) {
        (Some(q), _) => {
            let img = load_query(q, None)?;
            let hyps = f(&art, &img).with_context(|| format!("query {}", q.display()))?;
            write_hypotheses(&hyps, &input.out)?;
        }
        (None, Some((m, base))) => {
            std::fs::create_dir_all(&input.out).with_context(|| format!("creating {}", input.out.display()))?;
            m.samples.par_iter().try_for_each(|s| -> Result<()> {
                let path = base.join(&s.query);
                let img = load_query(&path, None)?;
                let hyps = f(&art, &img).with_context(|| format!("query {}", path.display()))?;
                write_hypotheses(&hyps, input.out.join(result_name(s.id)))?;
                Ok(())
            })?;
            tracing::info!(samples = m.samples.len(), "batch finished");
        }
        (None, None) => bail!("either --query or --batch is required"),
    }
    Ok(())
}

fn result_name(id: usize) -> String {
    format!("{id:04}.json")
}

fn eval(a: EvalArgs) -> Result<()> {
    let m = BenchmarkManifest::load(&a.manifest)?;
    let gts: Vec<Pose2D> = (0..m.samples.len()).map(|k| m.ground_truth(k)).collect();
    let hyps: Vec<Vec<PoseHypothesis>> = m
        .samples
        .par_iter()
        .map(|s| Ok(read_hypotheses(a.results.join(result_name(s.id)))?))
        .collect::<Result<_>>()?;
    let report = evaluate_run(&gts, &hyps, &EvalCondition::all())?;
    report.write(&a.out, a.out.with_extension("txt"))?;
    print!("{}", report.to_table());
    Ok(())
}
