//! Map-level metrics, method comparison and preview rendering.

use std::path::Path;
use std::time::Instant;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::config::{GenerationConfig, Method};
use crate::densitymap::{generate, total_count, DensityMap, Generation, StageTimings};
use crate::error::{Error, Result};
use crate::ingest::{HeadAnnotationSet, Scene};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn same_shape(a: &DensityMap, b: &DensityMap) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::InvalidParameter(format!(
            "map dimensions differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean squared pixel difference.
pub fn map_mse(a: &DensityMap, b: &DensityMap) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.values.len().max(1) as f64;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Mean absolute pixel difference.
pub fn map_mae(a: &DensityMap, b: &DensityMap) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.values.len().max(1) as f64;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// `|total(map) - T|`.
pub fn count_error(map: &DensityMap, annotations: &HeadAnnotationSet) -> f64 {
    (total_count(map) - annotations.len() as f64).abs()
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks). `None` when the
/// lengths differ, fewer than two samples are given, or either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Min-max normalized colormapped rendering; a constant map is all black.
pub fn preview_image(map: &DensityMap) -> RgbImage {
    let (lo, hi) = map
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let mut img = RgbImage::new(map.width as u32, map.height as u32);
    if range.is_nan() || range <= 0.0 {
        return img;
    }
    for (px, &v) in img.pixels_mut().zip(&map.values) {
        let t = ((v - lo) / range).clamp(0.0, 1.0);
        px.0 = COLORMAP[(t * 255.0).round() as usize];
    }
    img
}

pub fn render_preview(map: &DensityMap, path: &Path) -> Result<()> {
    preview_image(map)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io {
                path: path.to_path_buf(),
                source: io,
            },
            other => Error::Internal(other.to_string()),
        })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub total: f64,
    pub count_error: f64,
    pub sigmas: Vec<f64>,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairMetrics {
    pub a: Method,
    pub b: Method,
    /// Per-pixel mean squared difference between the two maps.
    pub pixel_mse: f64,
    /// Per-pixel mean absolute difference between the two maps.
    pub pixel_mae: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadiusCorrelation {
    pub method: Method,
    /// Spearman correlation of per-head sigma with the known head radius;
    /// `None` when undefined (e.g. constant sigma).
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    pub head_count: usize,
    pub methods: Vec<MethodSummary>,
    pub pairs: Vec<PairMetrics>,
    /// Present only for scenes with known head radii.
    pub sigma_radius_correlation: Option<Vec<RadiusCorrelation>>,
}

impl ComparisonReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn radius_correlation(&self, m: Method) -> Option<f64> {
        self.sigma_radius_correlation
            .as_ref()?
            .iter()
            .find(|c| c.method == m)?
            .spearman
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values are finite")
    }
}

/// Runs all three generators on the scene and compares them. `config`
/// supplies the shared tunables; its `method` field is ignored.
pub fn compare_methods(scene: &Scene, config: &GenerationConfig) -> Result<(ComparisonReport, Vec<Generation>)> {
    let mut generations = Vec::with_capacity(3);
    let mut methods = Vec::with_capacity(3);
    for m in Method::ALL {
        let cfg = GenerationConfig {
            method: m,
            ..config.clone()
        };
        let t = Instant::now();
        let g = generate(scene, &cfg).map_err(|e| Error::Method {
            method: m.to_string(),
            source: Box::new(e),
        })?;
        methods.push(MethodSummary {
            method: m,
            total: g.map.total(),
            count_error: count_error(&g.map, &scene.annotations),
            sigmas: g.sigmas.iter().map(|s| s.sigma).collect(),
            warnings: g.warnings.clone(),
            timings: g.timings.clone(),
            wall_ms: t.elapsed().as_secs_f64() * 1e3,
        });
        generations.push(g);
    }

    let mut pairs = Vec::new();
    for i in 0..generations.len() {
        for j in i + 1..generations.len() {
            let (a, b) = (&generations[i].map, &generations[j].map);
            pairs.push(PairMetrics {
                a: a.method,
                b: b.method,
                pixel_mse: map_mse(a, b)?,
                pixel_mae: map_mae(a, b)?,
            });
        }
    }

    let sigma_radius_correlation = scene.true_radii.as_ref().map(|radii| {
        methods
            .iter()
            .map(|s| RadiusCorrelation {
                method: s.method,
                spearman: spearman(&s.sigmas, radii),
            })
            .collect()
    });

    let report = ComparisonReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scene_id: scene.source_id.clone(),
        width: scene.grid.width(),
        height: scene.grid.height(),
        head_count: scene.head_count(),
        methods,
        pairs,
        sigma_radius_correlation,
    };
    Ok((report, generations))
}

/// 256-entry perceptually uniform colormap (inferno), dark to bright.
#[rustfmt::skip]
const COLORMAP: [[u8; 3]; 256] = [
    [0, 0, 4], [1, 0, 5], [1, 1, 6], [1, 1, 8],
    [2, 1, 10], [2, 2, 12], [2, 2, 14], [3, 2, 16],
    [4, 3, 18], [4, 3, 20], [5, 4, 23], [6, 4, 25],
    [7, 5, 27], [8, 5, 29], [9, 6, 31], [10, 7, 34],
    [11, 7, 36], [12, 8, 38], [13, 8, 41], [14, 9, 43],
    [16, 9, 45], [17, 10, 48], [18, 10, 50], [20, 11, 52],
    [21, 11, 55], [22, 11, 57], [24, 12, 60], [25, 12, 62],
    [27, 12, 65], [28, 12, 67], [30, 12, 69], [31, 12, 72],
    [33, 12, 74], [35, 12, 76], [36, 12, 79], [38, 12, 81],
    [40, 11, 83], [41, 11, 85], [43, 11, 87], [45, 11, 89],
    [47, 10, 91], [49, 10, 92], [50, 10, 94], [52, 10, 95],
    [54, 9, 97], [56, 9, 98], [57, 9, 99], [59, 9, 100],
    [61, 9, 101], [62, 9, 102], [64, 10, 103], [66, 10, 104],
    [68, 10, 104], [69, 10, 105], [71, 11, 106], [73, 11, 106],
    [74, 12, 107], [76, 12, 107], [77, 13, 108], [79, 13, 108],
    [81, 14, 108], [82, 14, 109], [84, 15, 109], [85, 15, 109],
    [87, 16, 110], [89, 16, 110], [90, 17, 110], [92, 18, 110],
    [93, 18, 110], [95, 19, 110], [97, 19, 110], [98, 20, 110],
    [100, 21, 110], [101, 21, 110], [103, 22, 110], [105, 22, 110],
    [106, 23, 110], [108, 24, 110], [109, 24, 110], [111, 25, 110],
    [113, 25, 110], [114, 26, 110], [116, 26, 110], [117, 27, 110],
    [119, 28, 109], [120, 28, 109], [122, 29, 109], [124, 29, 109],
    [125, 30, 109], [127, 30, 108], [128, 31, 108], [130, 32, 108],
    [132, 32, 107], [133, 33, 107], [135, 33, 107], [136, 34, 106],
    [138, 34, 106], [140, 35, 105], [141, 35, 105], [143, 36, 105],
    [144, 37, 104], [146, 37, 104], [147, 38, 103], [149, 38, 103],
    [151, 39, 102], [152, 39, 102], [154, 40, 101], [155, 41, 100],
    [157, 41, 100], [159, 42, 99], [160, 42, 99], [162, 43, 98],
    [163, 44, 97], [165, 44, 96], [166, 45, 96], [168, 46, 95],
    [169, 46, 94], [171, 47, 94], [173, 48, 93], [174, 48, 92],
    [176, 49, 91], [177, 50, 90], [179, 50, 90], [180, 51, 89],
    [182, 52, 88], [183, 53, 87], [185, 53, 86], [186, 54, 85],
    [188, 55, 84], [189, 56, 83], [191, 57, 82], [192, 58, 81],
    [193, 58, 80], [195, 59, 79], [196, 60, 78], [198, 61, 77],
    [199, 62, 76], [200, 63, 75], [202, 64, 74], [203, 65, 73],
    [204, 66, 72], [206, 67, 71], [207, 68, 70], [208, 69, 69],
    [210, 70, 68], [211, 71, 67], [212, 72, 66], [213, 74, 65],
    [215, 75, 63], [216, 76, 62], [217, 77, 61], [218, 78, 60],
    [219, 80, 59], [221, 81, 58], [222, 82, 56], [223, 83, 55],
    [224, 85, 54], [225, 86, 53], [226, 87, 52], [227, 89, 51],
    [228, 90, 49], [229, 92, 48], [230, 93, 47], [231, 94, 46],
    [232, 96, 45], [233, 97, 43], [234, 99, 42], [235, 100, 41],
    [235, 102, 40], [236, 103, 38], [237, 105, 37], [238, 106, 36],
    [239, 108, 35], [239, 110, 33], [240, 111, 32], [241, 113, 31],
    [241, 115, 29], [242, 116, 28], [243, 118, 27], [243, 120, 25],
    [244, 121, 24], [245, 123, 23], [245, 125, 21], [246, 126, 20],
    [246, 128, 19], [247, 130, 18], [247, 132, 16], [248, 133, 15],
    [248, 135, 14], [248, 137, 12], [249, 139, 11], [249, 140, 10],
    [249, 142, 9], [250, 144, 8], [250, 146, 7], [250, 148, 7],
    [251, 150, 6], [251, 151, 6], [251, 153, 6], [251, 155, 6],
    [251, 157, 7], [252, 159, 7], [252, 161, 8], [252, 163, 9],
    [252, 165, 10], [252, 166, 12], [252, 168, 13], [252, 170, 15],
    [252, 172, 17], [252, 174, 18], [252, 176, 20], [252, 178, 22],
    [252, 180, 24], [251, 182, 26], [251, 184, 29], [251, 186, 31],
    [251, 188, 33], [251, 190, 35], [250, 192, 38], [250, 194, 40],
    [250, 196, 42], [250, 198, 45], [249, 199, 47], [249, 201, 50],
    [249, 203, 53], [248, 205, 55], [248, 207, 58], [247, 209, 61],
    [247, 211, 64], [246, 213, 67], [246, 215, 70], [245, 217, 73],
    [245, 219, 76], [244, 221, 79], [244, 223, 83], [244, 225, 86],
    [243, 227, 90], [243, 229, 93], [242, 230, 97], [242, 232, 101],
    [242, 234, 105], [241, 236, 109], [241, 237, 113], [241, 239, 117],
    [241, 241, 121], [242, 242, 125], [242, 244, 130], [243, 245, 134],
    [243, 246, 138], [244, 248, 142], [245, 249, 146], [246, 250, 150],
    [248, 251, 154], [249, 252, 157], [250, 253, 161], [252, 255, 164],
];
