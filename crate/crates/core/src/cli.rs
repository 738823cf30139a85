//! Command-line front end for the `crowdmark` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 input or validation error,
//! 3 internal error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use rayon::prelude::*;

use crate::chanvese::{chan_vese_segment, init_region_in, roi_window_scaled};
use crate::config::{GenerationConfig, Method};
use crate::densitymap::{generate, sidecar_path, write_atomic, write_density, write_sidecar, Sidecar};
use crate::error::{Error, Result};
use crate::eval::{compare_methods, render_preview};
use crate::ingest::{make_synthetic_scene, write_annotations, write_pgm, AnnotationFormat, Scene, SyntheticSpec};
use crate::neighbors::brute_force_nearest_all;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "crowdmark",
    version,
    about = "Ground-truth crowd density maps from head annotations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one density map.
    Generate(GenerateArgs),
    /// Run all three generators on one scene and write a comparison report.
    Compare(CompareArgs),
    /// Dump the segmentation mask of one head as PGM.
    SegmentDebug(SegmentDebugArgs),
    /// Render a synthetic scene from a JSON description.
    Synth(SynthArgs),
    /// Generate maps for every image/annotation pair in a manifest.
    Batch(BatchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Static,
    Knn,
    ContentAware,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Static => Method::Static,
            MethodArg::Knn => Method::Knn,
            MethodArg::ContentAware => Method::ContentAware,
        }
    }
}

#[derive(Debug, Args)]
struct Tunables {
    /// Plain `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Static baseline spread in pixels.
    #[arg(long)]
    sigma: Option<f64>,
    /// kNN baseline scaling constant.
    #[arg(long)]
    f: Option<f64>,
    /// Content-aware extent factor (sigma = mean boundary radius / extent).
    #[arg(long)]
    extent: Option<f64>,
    /// Kernel cutoff in multiples of sigma.
    #[arg(long)]
    truncation: Option<f64>,
}

impl Tunables {
    fn resolve(&self, method: Option<Method>) -> Result<GenerationConfig> {
        let mut cfg = GenerationConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(m) = method {
            cfg.method = m;
        }
        if let Some(v) = self.sigma {
            cfg.static_sigma = v;
        }
        if let Some(v) = self.f {
            cfg.knn_f = v;
        }
        if let Some(v) = self.extent {
            cfg.extent_factor = v;
        }
        if let Some(v) = self.truncation {
            cfg.truncation = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write a colormapped PNG preview.
    #[arg(long)]
    preview: Option<PathBuf>,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Write one preview PNG per method.
    #[arg(long)]
    previews: bool,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Debug, Args)]
struct SegmentDebugArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    head_index: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_image: PathBuf,
    #[arg(long)]
    out_annotations: PathBuf,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BatchArgs {
    /// CSV of `image,annotation` path pairs, relative to the manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    tunables: Tunables,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_INTERNAL
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::SegmentDebug(a) => cmd_segment_debug(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Batch(a) => cmd_batch(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn generate_to(scene: &Scene, cfg: &GenerationConfig, out: &Path, preview: Option<&Path>) -> Result<()> {
    let generation = generate(scene, cfg)?;
    write_density(&generation.map, out)?;
    write_sidecar(&Sidecar::new(scene, &generation, cfg), &sidecar_path(out))?;
    if let Some(p) = preview {
        render_preview(&generation.map, p)?;
    }
    info!(
        "{}: {} heads, total {:.6}, {} warnings -> {}",
        scene.source_id,
        scene.head_count(),
        generation.map.total(),
        generation.warnings.len(),
        out.display()
    );
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let cfg = a.tunables.resolve(Some(a.method.into()))?;
    let scene = Scene::load(&a.image, &a.annotations)?;
    generate_to(&scene, &cfg, &a.out, a.preview.as_deref())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let cfg = a.tunables.resolve(None)?;
    let scene = Scene::load(&a.image, &a.annotations)?;
    create_dir(&a.out_dir)?;
    let (report, generations) = compare_methods(&scene, &cfg)?;
    write_atomic(&a.out_dir.join("report.json"), report.to_json().as_bytes())?;
    if a.previews {
        for g in &generations {
            render_preview(&g.map, &a.out_dir.join(format!("{}.png", g.map.method)))?;
        }
    }
    Ok(())
}

fn cmd_segment_debug(a: SegmentDebugArgs) -> Result<()> {
    let cfg = a.tunables.resolve(None)?;
    let scene = Scene::load(&a.image, &a.annotations)?;
    let points = scene.annotations.points();
    let head = *points.get(a.head_index).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "head index {} out of range ({} heads)",
            a.head_index,
            points.len()
        ))
    })?;
    let grid = &scene.grid;
    let nn_distance =
        brute_force_nearest_all(points)[a.head_index].map_or(grid.width().min(grid.height()) as f64 / 8.0, |(_, d)| d);
    let window = roi_window_scaled(head, nn_distance, cfg.window_scale, grid)?;
    let init = init_region_in(head, window, grid)?;
    let seg = chan_vese_segment(grid, &window, &init, &cfg.chan_vese)?;
    let bytes: Vec<u8> = seg.mask.cells().iter().map(|&v| if v { 255 } else { 0 }).collect();
    write_pgm(&a.out, window.width(), window.height(), &bytes)?;
    println!(
        "head {} window x {}..={} y {}..={} c1 {:.6} c2 {:.6} energy {:.6} iterations {} converged {}",
        a.head_index,
        window.bounds.x0,
        window.bounds.x1,
        window.bounds.y0,
        window.bounds.y1,
        seg.c1,
        seg.c2,
        seg.final_energy,
        seg.iterations_run,
        seg.converged
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&a.spec).map_err(|e| Error::Io {
        path: a.spec.clone(),
        source: e,
    })?;
    let mut spec: SyntheticSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let scene = make_synthetic_scene(&spec)?;
    scene.grid.save(&a.out_image)?;
    write_annotations(
        &scene.annotations,
        &a.out_annotations,
        AnnotationFormat::from_path(&a.out_annotations),
    )
}

fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.replace(' ', "") == "image,annotation") {
            continue;
        }
        let (img, ann) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `image,annotation`, found {line:?}"),
        })?;
        pairs.push((base.join(img.trim()), base.join(ann.trim())));
    }
    Ok(pairs)
}

fn cmd_batch(a: BatchArgs) -> Result<()> {
    let cfg = a.tunables.resolve(Some(a.method.into()))?;
    if a.jobs == 0 {
        return Err(Error::InvalidParameter("--jobs must be >= 1".into()));
    }
    let pairs = read_manifest(&a.manifest)?;
    create_dir(&a.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let failures: Vec<(PathBuf, Error)> = pool.install(|| {
        pairs
            .par_iter()
            .filter_map(|(img, ann)| {
                let stem = img
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let out = a.out_dir.join(format!("{stem}.cadm"));
                Scene::load(img, ann)
                    .and_then(|scene| generate_to(&scene, &cfg, &out, None))
                    .err()
                    .map(|e| (img.clone(), e))
            })
            .collect()
    });
    for (img, e) in &failures {
        error!("{}: {e}", img.display());
        eprintln!("error: {}: {e}", img.display());
    }
    match failures.into_iter().next() {
        None => Ok(()),
        Some((img, e)) => Err(Error::Method {
            method: format!("batch ({})", img.display()),
            source: Box::new(e),
        }),
    }
}
