//! Images, head annotations and synthetic test scenes.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl IntensityGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::Validation(format!(
                "grid of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "intensity {} at index {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    /// 8-bit quantization used when writing the grid back out.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Writes a binary PGM (`.pgm`) or 8-bit grayscale PNG, chosen by extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        match extension(path).as_deref() {
            Some("png") => {
                let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
                    .ok_or_else(|| Error::Internal("grid buffer size".into()))?;
                img.save_with_format(path, ImageFormat::Png)
                    .map_err(|e| image_error(path, e))
            }
            _ => write_pgm(path, self.width, self.height, &bytes),
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Writes 8-bit binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(bytes.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("write to vec");
    out.extend_from_slice(bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads an 8-bit grayscale or RGB PNG, or a binary PGM (P5, maxval 255).
///
/// RGB is converted with luma weights `0.299 R + 0.587 G + 0.114 B`; all
/// values are scaled by `1/255`.
pub fn load_image(path: &Path) -> Result<IntensityGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        return decode_pgm(&bytes);
    }
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| image_error(path, e))?;
        return grid_from_dynamic(img);
    }
    let head: String = bytes.iter().take(4).map(|b| format!("{b:02x}")).collect();
    Err(Error::Format(format!(
        "{}: unrecognized signature 0x{head} (expected PNG or binary PGM P5)",
        path.display()
    )))
}

fn grid_from_dynamic(img: DynamicImage) -> Result<IntensityGrid> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageRgb8(buf) => buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
        other => {
            let color = other.color();
            let bits = color.bits_per_pixel() / color.channel_count() as u16;
            return Err(Error::Format(match color {
                ColorType::L16 | ColorType::Rgb16 => {
                    format!("bit depth {bits} (only 8-bit supported)")
                }
                _ => format!(
                    "color type {color:?} with {} channels (only 8-bit gray or RGB supported)",
                    color.channel_count()
                ),
            }));
        }
    };
    IntensityGrid::new(w, h, values)
}

#[inline]
fn luma(r: u8, g: u8, b: u8) -> f64 {
    ((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0).clamp(0.0, 1.0)
}

fn decode_pgm(bytes: &[u8]) -> Result<IntensityGrid> {
    // Header: magic, width, height, maxval, separated by whitespace with
    // optional `#` comments, followed by a single whitespace byte.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("PGM header: missing or invalid {name}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "PGM maxval {maxval} (only 8-bit, maxval 255, supported)"
        )));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("PGM header: missing separator before raster".into()));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() < width * height {
        return Err(Error::Format(format!(
            "PGM raster: expected {} bytes, found {}",
            width * height,
            payload.len()
        )));
    }
    let values = payload[..width * height].iter().map(|&v| v as f64 / 255.0).collect();
    IntensityGrid::new(width, height, values)
}

/// Ordered head centroids with exact duplicates removed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadAnnotationSet {
    points: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationFormat {
    Csv,
    Json,
}

impl AnnotationFormat {
    /// Guesses from the file extension; anything but `.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match extension(path).as_deref() {
            Some("json") => AnnotationFormat::Json,
            _ => AnnotationFormat::Csv,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonAnnotations {
    points: Vec<[f64; 2]>,
}

impl HeadAnnotationSet {
    /// Builds a set, keeping the first occurrence of each exact duplicate.
    pub fn new(points: impl IntoIterator<Item = Point>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for p in points {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::Validation(format!("non-finite coordinate ({}, {})", p.x, p.y)));
            }
            if p.x < 0.0 || p.y < 0.0 {
                return Err(Error::Validation(format!("negative coordinate ({}, {})", p.x, p.y)));
            }
            // +0.0 normalizes -0.0 so both hash alike
            if seen.insert(((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits())) {
                kept.push(p);
            }
        }
        Ok(Self { points: kept })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.split('\n').enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end_matches('\r').trim() == "x,y" => {}
            Some((_, header)) => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `x,y`, found {header:?}"),
                })
            }
            None => unreachable!("split yields at least one item"),
        }
        let mut points = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let (Some(xs), Some(ys), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected two comma-separated values, found {line:?}"),
                });
            };
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("invalid number {s:?}"),
                    })
            };
            let p = Point::new(parse(xs)?, parse(ys)?);
            if p.x < 0.0 || p.y < 0.0 {
                return Err(Error::Validation(format!(
                    "line {line_no}: negative coordinate ({}, {})",
                    p.x, p.y
                )));
            }
            points.push(p);
        }
        Self::new(points)
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let parsed: JsonAnnotations = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::new(parsed.points.into_iter().map(|[x, y]| Point::new(x, y)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.x, p.y));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let doc = JsonAnnotations {
            points: self.points.iter().map(|p| [p.x, p.y]).collect(),
        };
        serde_json::to_string(&doc).expect("serializing finite floats")
    }

    /// Every point must lie in `[0, width) x [0, height)`.
    pub fn validate_bounds(&self, width: usize, height: usize) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if p.x >= width as f64 || p.y >= height as f64 {
                return Err(Error::Validation(format!(
                    "annotation {i} at ({}, {}) outside {width}x{height} image",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

pub fn load_annotations(path: &Path, fmt: AnnotationFormat) -> Result<HeadAnnotationSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match fmt {
        AnnotationFormat::Csv => HeadAnnotationSet::parse_csv(&text),
        AnnotationFormat::Json => HeadAnnotationSet::parse_json(&text),
    }
}

pub fn write_annotations(set: &HeadAnnotationSet, path: &Path, fmt: AnnotationFormat) -> Result<()> {
    let text = match fmt {
        AnnotationFormat::Csv => set.to_csv(),
        AnnotationFormat::Json => set.to_json(),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// An image with validated annotations.
#[derive(Debug, Clone)]
pub struct Scene {
    pub grid: IntensityGrid,
    pub annotations: HeadAnnotationSet,
    pub source_id: String,
    /// Known head radii, aligned with `annotations`; only synthetic scenes have them.
    pub true_radii: Option<Vec<f64>>,
}

impl Scene {
    pub fn new(grid: IntensityGrid, annotations: HeadAnnotationSet, source_id: impl Into<String>) -> Result<Self> {
        annotations.validate_bounds(grid.width(), grid.height())?;
        Ok(Self {
            grid,
            annotations,
            source_id: source_id.into(),
            true_radii: None,
        })
    }

    pub fn load(image: &Path, annotations: &Path) -> Result<Self> {
        let grid = load_image(image)?;
        let ann = load_annotations(annotations, AnnotationFormat::from_path(annotations))?;
        let id = image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(grid, ann, id)
    }

    pub fn head_count(&self) -> usize {
        self.annotations.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiskSpec {
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(default = "default_head_intensity")]
    pub intensity: f64,
}

fn default_head_intensity() -> f64 {
    1.0
}

/// Description of a synthetic scene of filled disks ("heads") on a flat
/// background. Also the JSON schema accepted by `crowdmark synth --spec`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub background: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    pub disks: Vec<DiskSpec>,
}

/// Rasterizes the disks (pixel inside iff its center is within the radius),
/// adds uniform noise in `±noise`, clamps to `[0, 1]`. Later disks paint over
/// earlier ones where they overlap.
pub fn make_synthetic_scene(spec: &SyntheticSpec) -> Result<Scene> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::Validation(format!("scene size must be positive, got {w}x{h}")));
    }
    let unit = 0.0..=1.0;
    if !unit.contains(&spec.background) {
        return Err(Error::Validation(format!(
            "background {} outside [0, 1]",
            spec.background
        )));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Validation(format!(
            "noise amplitude {} must be >= 0",
            spec.noise
        )));
    }
    for (i, d) in spec.disks.iter().enumerate() {
        let [cx, cy] = d.center;
        if !unit.contains(&d.intensity) {
            return Err(Error::Validation(format!(
                "disk {i}: intensity {} outside [0, 1]",
                d.intensity
            )));
        }
        if d.radius.is_nan()
            || d.radius < 0.0
            || cx - d.radius < 0.0
            || cy - d.radius < 0.0
            || cx + d.radius > (w - 1) as f64
            || cy + d.radius > (h - 1) as f64
        {
            return Err(Error::Validation(format!(
                "disk {i} at ({cx}, {cy}) radius {} does not fit in {w}x{h}",
                d.radius
            )));
        }
    }

    let mut values = vec![spec.background; w * h];
    for d in &spec.disks {
        let [cx, cy] = d.center;
        let r2 = d.radius * d.radius;
        let x0 = (cx - d.radius).floor().max(0.0) as usize;
        let y0 = (cy - d.radius).floor().max(0.0) as usize;
        let x1 = ((cx + d.radius).ceil() as usize).min(w - 1);
        let y1 = ((cy + d.radius).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if Point::new(x as f64, y as f64).dist2(Point::new(cx, cy)) <= r2 {
                    values[y * w + x] = d.intensity;
                }
            }
        }
    }
    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for v in &mut values {
            *v = (*v + rng.gen_range(-spec.noise..=spec.noise)).clamp(0.0, 1.0);
        }
    }

    let grid = IntensityGrid::new(w, h, values)?;
    let mut radii = Vec::new();
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    for d in &spec.disks {
        let p = Point::new(d.center[0], d.center[1]);
        if seen.insert(((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits())) {
            points.push(p);
            radii.push(d.radius);
        }
    }
    let annotations = HeadAnnotationSet::new(points)?;
    let mut scene = Scene::new(grid, annotations, format!("synthetic-{}", spec.seed))?;
    scene.true_radii = Some(radii);
    Ok(scene)
}
