//! Density map assembly, the three generators, and the binary density format.
//!
//! File layout (little-endian):
//!
//! | bytes | field                                           |
//! |-------|-------------------------------------------------|
//! | 4     | magic `CADM`                                    |
//! | 1     | version, `1`                                    |
//! | 1     | method (0 static, 1 knn, 2 content-aware)       |
//! | 4     | width (u32)                                     |
//! | 4     | height (u32)                                    |
//! | 4     | head count (u32)                                |
//! | 4·w·h | values, IEEE-754 binary32, row-major            |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chanvese::{chan_vese_segment, init_region_in, roi_window_scaled};
use crate::config::{GenerationConfig, Method};
use crate::error::{Error, Result};
use crate::geometry::{PixelRect, Point};
use crate::ingest::Scene;
use crate::kernels::{
    compensated_sum, make_kernel, sigma_content_aware, sigma_knn, sigma_static, KernelPatch, SigmaProvenance, SigmaSpec,
};
use crate::neighbors::{brute_force_knn, brute_force_nearest_all, KdTree, PointIndex};

pub const MAGIC: &[u8; 4] = b"CADM";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 18;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, non-negative.
    pub values: Vec<f64>,
    pub method: Method,
    pub head_count: usize,
}

impl DensityMap {
    pub fn zeros(width: usize, height: usize, method: Method) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            method,
            head_count: 0,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn total(&self) -> f64 {
        total_count(self)
    }

    /// Whether the total mass equals the head count within the count tolerance.
    pub fn has_count_integrity(&self) -> bool {
        let t = self.head_count as f64;
        let err = (self.total() - t).abs();
        if self.head_count == 0 {
            err <= 1e-9
        } else {
            err <= 1e-3 * t
        }
    }

    fn add_patch(&mut self, patch: &KernelPatch) {
        let s = patch.support;
        let pw = s.width();
        for (row, y) in (s.y0..=s.y1).enumerate() {
            let dst = &mut self.values[y * self.width + s.x0..=y * self.width + s.x1];
            for (d, &v) in dst.iter_mut().zip(&patch.weights[row * pw..(row + 1) * pw]) {
                *d += v;
            }
        }
    }
}

/// Sum of all values with compensated summation.
pub fn total_count(map: &DensityMap) -> f64 {
    compensated_sum(map.values.iter().copied())
}

/// Pixelwise sum of the kernels in index order.
pub fn accumulate_additive(kernels: &[KernelPatch], width: usize, height: usize, method: Method) -> DensityMap {
    let mut map = DensityMap::zeros(width, height, method);
    for k in kernels {
        map.add_patch(k);
    }
    map.head_count = kernels.len();
    map
}

/// Restricts each kernel to the cell of its head (pixels whose nearest head
/// it is, smaller index on ties) and rescales the survivors to unit mass.
///
/// A kernel with no weight left in its cell is replaced by a unit spike on
/// the cell pixel nearest its center, or on its rounded center if the cell
/// holds no pixel at all.
pub fn exclusive_patches(
    kernels: &[KernelPatch],
    points: &[Point],
    width: usize,
    height: usize,
) -> Result<Vec<KernelPatch>> {
    if kernels.len() != points.len() {
        return Err(Error::InvalidParameter(format!(
            "{} kernels for {} head points",
            kernels.len(),
            points.len()
        )));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let tree = KdTree::build(points)?;
    kernels
        .par_iter()
        .enumerate()
        .map(|(i, k)| Ok(mask_to_cell(&tree, i, k, width, height)))
        .collect()
}

fn mask_to_cell(tree: &KdTree, i: usize, kernel: &KernelPatch, width: usize, height: usize) -> KernelPatch {
    let head = tree.points()[i];
    // farthest pixel carrying weight
    let reach2 = kernel
        .iter()
        .filter(|&(_, v)| v > 0.0)
        .map(|((x, y), _)| Point::new(x as f64, y as f64).dist2(head))
        .fold(0.0f64, f64::max);
    if tree.len() > 1 {
        let nn2 = tree.knn_point(head, 1, Some(i))[0].0;
        // every weighted pixel is strictly closer to this head than to any other
        if 4.0 * reach2 < nn2 {
            return kernel.clone();
        }
    }

    let mut masked = kernel.clone();
    let mut removed = false;
    for (((x, y), _), w) in kernel.iter().zip(masked.weights.iter_mut()) {
        if *w > 0.0 && tree.nearest(Point::new(x as f64, y as f64)) != i {
            *w = 0.0;
            removed = true;
        }
    }
    if !removed {
        return masked;
    }
    let kept = compensated_sum(masked.weights.iter().copied());
    if kept > 0.0 {
        masked.weights.iter_mut().for_each(|w| *w /= kept);
        return masked;
    }

    let (px, py) = nearest_cell_pixel(tree, i, width, height).unwrap_or_else(|| head.to_pixel(width, height));
    KernelPatch {
        center: kernel.center,
        sigma: kernel.sigma,
        support: PixelRect {
            x0: px,
            y0: py,
            x1: px,
            y1: py,
        },
        weights: vec![1.0],
    }
}

/// Closest pixel (to head `i`) among the pixels of head `i`'s cell.
fn nearest_cell_pixel(tree: &KdTree, i: usize, width: usize, height: usize) -> Option<(usize, usize)> {
    let head = tree.points()[i];
    let (cx, cy) = head.to_pixel(width, height);
    let (cx, cy) = (cx as i64, cy as i64);
    let mut best: Option<(f64, (usize, usize))> = None;
    let max_r = width.max(height) as i64;
    for r in 0..=max_r {
        // the head is within one pixel of (cx, cy) on each axis, so ring
        // pixels are at least r - 1 away from it
        if let Some((bd, _)) = best {
            let lower = r as f64 - 1.0;
            if lower > 0.0 && lower * lower > bd {
                break;
            }
        }
        for y in (cy - r)..=(cy + r) {
            if y < 0 || y >= height as i64 {
                continue;
            }
            let on_edge = y == cy - r || y == cy + r;
            let xs: Vec<i64> = if on_edge {
                ((cx - r)..=(cx + r)).collect()
            } else {
                vec![cx - r, cx + r]
            };
            for x in xs {
                if x < 0 || x >= width as i64 {
                    continue;
                }
                let p = Point::new(x as f64, y as f64);
                if tree.nearest(p) != i {
                    continue;
                }
                let d = p.dist2(head);
                let cand = (d, (x as usize, y as usize));
                if best.is_none_or(|b| (cand.0, cand.1 .1, cand.1 .0) < (b.0, b.1 .1, b.1 .0)) {
                    best = Some(cand);
                }
            }
        }
    }
    best.map(|b| b.1)
}

/// Nearest-head masked accumulation; head `i`'s cell receives mass only from
/// kernel `i` and each kernel contributes exactly unit mass.
pub fn accumulate_exclusive(
    kernels: &[KernelPatch],
    points: &[Point],
    width: usize,
    height: usize,
) -> Result<DensityMap> {
    let patches = exclusive_patches(kernels, points, width, height)?;
    let mut map = accumulate_additive(&patches, width, height, Method::ContentAware);
    map.head_count = kernels.len();
    Ok(map)
}

/// Number of patches with non-zero weight at each pixel.
pub fn contributor_counts(patches: &[KernelPatch], width: usize, height: usize) -> Vec<u32> {
    let mut counts = vec![0u32; width * height];
    for p in patches {
        for ((x, y), v) in p.iter() {
            if v > 0.0 {
                counts[y * width + x] += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub neighbors_ms: f64,
    pub segmentation_ms: f64,
    pub kernels_ms: f64,
    pub accumulation_ms: f64,
}

/// A generated map with its per-head spreads and any per-head warnings.
#[derive(Debug, Clone)]
pub struct Generation {
    pub map: DensityMap,
    pub sigmas: Vec<SigmaSpec>,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// kNN spread for head `i` from brute-force neighbors, or the static spread
/// for a lone head.
fn knn_sigma_for(points: &[Point], i: usize, config: &GenerationConfig) -> Result<SigmaSpec> {
    if points.len() < 2 {
        return sigma_static(config.static_sigma);
    }
    let nn = brute_force_knn(points, i, 3.min(points.len() - 1))?;
    sigma_knn(&nn.distances, config.knn_f)
}

/// Runs the configured generator over a scene.
pub fn generate(scene: &Scene, config: &GenerationConfig) -> Result<Generation> {
    config.validate()?;
    let (w, h) = (scene.grid.width(), scene.grid.height());
    let points = scene.annotations.points();
    let mut timings = StageTimings::default();
    let mut warnings = Vec::new();

    if points.is_empty() {
        return Ok(Generation {
            map: DensityMap::zeros(w, h, config.method),
            sigmas: Vec::new(),
            warnings,
            timings,
        });
    }

    let sigmas: Vec<SigmaSpec> = match config.method {
        Method::Static => {
            let s = sigma_static(config.static_sigma)?;
            vec![s; points.len()]
        }
        Method::Knn => {
            let t = Instant::now();
            let out = if points.len() == 1 {
                warnings.push("head 0: no neighbors; using static sigma".to_string());
                vec![sigma_static(config.static_sigma)?]
            } else {
                let index = PointIndex::kdtree(points)?;
                let k = 3.min(points.len() - 1);
                (0..points.len())
                    .map(|i| {
                        let nn = index.knn(i, k).map_err(|e| e.at_head(i))?;
                        sigma_knn(&nn.distances, config.knn_f).map_err(|e| e.at_head(i))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            timings.neighbors_ms = ms_since(t);
            out
        }
        Method::ContentAware => {
            let t = Instant::now();
            let nearest = brute_force_nearest_all(points);
            timings.neighbors_ms = ms_since(t);

            let t = Instant::now();
            let lone_half = w.min(h) as f64 / 8.0;
            let results: Vec<(SigmaSpec, Option<String>)> = points
                .par_iter()
                .enumerate()
                .map(|(i, &head)| {
                    let nn_distance = nearest[i].map_or(lone_half, |(_, d)| d);
                    match content_aware_sigma(scene, head, nn_distance, config) {
                        Ok(s) => Ok((s, None)),
                        Err(reason) => {
                            let s = knn_sigma_for(points, i, config).map_err(|e| e.at_head(i))?;
                            Ok((s, Some(format!("head {i}: {reason}; using kNN sigma"))))
                        }
                    }
                })
                .collect::<Result<_>>()?;
            timings.segmentation_ms = ms_since(t);
            results
                .into_iter()
                .map(|(s, warning)| {
                    if let Some(m) = warning {
                        warn!("{}: {m}", scene.source_id);
                        warnings.push(m);
                    }
                    s
                })
                .collect()
        }
    };

    let t = Instant::now();
    let kernels: Vec<KernelPatch> = points
        .par_iter()
        .zip(&sigmas)
        .enumerate()
        .map(|(i, (&p, s))| make_kernel(p, s.sigma, config.truncation, w, h).map_err(|e| e.at_head(i)))
        .collect::<Result<_>>()?;
    timings.kernels_ms = ms_since(t);

    let t = Instant::now();
    let mut map = match config.method {
        Method::ContentAware => accumulate_exclusive(&kernels, points, w, h)?,
        m => accumulate_additive(&kernels, w, h, m),
    };
    map.method = config.method;
    timings.accumulation_ms = ms_since(t);

    if !map.has_count_integrity() {
        return Err(Error::Internal(format!(
            "map total {} deviates from head count {}",
            map.total(),
            map.head_count
        )));
    }
    debug!(
        "{}: {} heads, method {}, total {}",
        scene.source_id,
        points.len(),
        config.method,
        map.total()
    );
    Ok(Generation {
        map,
        sigmas,
        warnings,
        timings,
    })
}

/// Segmentation-derived spread for one head; `Err` carries the reason to fall back.
fn content_aware_sigma(
    scene: &Scene,
    head: Point,
    nn_distance: f64,
    config: &GenerationConfig,
) -> Result<SigmaSpec, String> {
    let grid = &scene.grid;
    let window = roi_window_scaled(head, nn_distance, config.window_scale, grid).map_err(|e| e.to_string())?;
    let init = init_region_in(head, window, grid).map_err(|e| e.to_string())?;
    let seg = chan_vese_segment(grid, &window, &init, &config.chan_vese).map_err(|e| e.to_string())?;
    if seg.collapsed {
        return Err("segmentation collapsed".into());
    }
    let spec = sigma_content_aware(&seg, head, config.extent_factor).map_err(|e| e.to_string())?;
    if let SigmaProvenance::ContentAware { degenerate: true, .. } = spec.provenance {
        return Err("single-pixel head region".into());
    }
    Ok(spec)
}

pub fn encode_density(map: &DensityMap) -> Result<Vec<u8>> {
    let dim =
        |name: &str, v: usize| u32::try_from(v).map_err(|_| Error::InvalidParameter(format!("{name} {v} exceeds u32")));
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.values.len());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(map.method.code());
    out.extend_from_slice(&dim("width", map.width)?.to_le_bytes());
    out.extend_from_slice(&dim("height", map.height)?.to_le_bytes());
    out.extend_from_slice(&dim("head count", map.head_count)?.to_le_bytes());
    for &v in &map.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_density(bytes: &[u8]) -> Result<DensityMap> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "density header truncated: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::BadVersion {
            expected: FORMAT_VERSION,
            found: bytes[4],
        });
    }
    let method =
        Method::from_code(bytes[5]).ok_or_else(|| Error::Format(format!("unknown method code {}", bytes[5])))?;
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (width, height, head_count) = (u32_at(6), u32_at(10), u32_at(14));
    let payload = &bytes[HEADER_LEN..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("dimensions {width}x{height} overflow")))?;
    if payload.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: payload.len(),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Format(format!(
            "invalid density value {} at index {i}",
            values[i]
        )));
    }
    Ok(DensityMap {
        width,
        height,
        values,
        method,
        head_count,
    })
}

pub fn write_density(map: &DensityMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_density(map)?)
}

pub fn read_density(path: &Path) -> Result<DensityMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_density(&bytes)
}

/// Writes to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a file path", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// JSON written next to a density file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub source_id: String,
    pub method: Method,
    pub width: usize,
    pub height: usize,
    pub head_count: usize,
    pub total: f64,
    pub config: GenerationConfig,
    pub sigmas: Vec<f64>,
    pub warnings: Vec<String>,
}

pub const SIDECAR_SCHEMA_VERSION: u32 = 1;

impl Sidecar {
    pub fn new(scene: &Scene, generation: &Generation, config: &GenerationConfig) -> Self {
        let map = &generation.map;
        Self {
            schema_version: SIDECAR_SCHEMA_VERSION,
            source_id: scene.source_id.clone(),
            method: map.method,
            width: map.width,
            height: map.height,
            head_count: map.head_count,
            total: map.total(),
            config: config.clone(),
            sigmas: generation.sigmas.iter().map(|s| s.sigma).collect(),
            warnings: generation.warnings.clone(),
        }
    }
}

/// Sidecar path: the density path with its extension replaced by `.json`.
pub fn sidecar_path(density_path: &Path) -> PathBuf {
    density_path.with_extension("json")
}

pub fn write_sidecar(sidecar: &Sidecar, path: &Path) -> Result<()> {
    let text = serde_json::to_vec_pretty(sidecar).map_err(|e| Error::Internal(e.to_string()))?;
    write_atomic(path, &text)
}
