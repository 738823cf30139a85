//! Per-head Gaussian spread and discrete unit-mass kernels.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::chanvese::{RegionMask, SegmentationResult};
use crate::config::Method;
use crate::error::{Error, Result};
use crate::geometry::{PixelRect, Point};

/// Smallest spread produced by the content-aware rule.
pub const MIN_CONTENT_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaProvenance {
    Static,
    Knn {
        mean_distance: f64,
        f: f64,
        neighbors_used: usize,
    },
    ContentAware {
        mean_boundary_radius: f64,
        extent_factor: f64,
        boundary_pixels: usize,
        /// The head region was a single pixel; sigma is the floor value.
        degenerate: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSpec {
    pub method: Method,
    pub sigma: f64,
    pub provenance: SigmaProvenance,
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")))
    }
}

pub fn sigma_static(config_sigma: f64) -> Result<SigmaSpec> {
    require_positive("sigma", config_sigma)?;
    Ok(SigmaSpec {
        method: Method::Static,
        sigma: config_sigma,
        provenance: SigmaProvenance::Static,
    })
}

/// `f` times the mean of the given neighbor distances (normally three; fewer
/// when the scene has fewer other heads).
pub fn sigma_knn(neighbor_distances: &[f64], f: f64) -> Result<SigmaSpec> {
    require_positive("f", f)?;
    if neighbor_distances.is_empty() || neighbor_distances.len() > 3 {
        return Err(Error::InvalidParameter(format!(
            "expected 1 to 3 neighbor distances, got {}",
            neighbor_distances.len()
        )));
    }
    for &d in neighbor_distances {
        require_positive("neighbor distance", d)?;
    }
    let mean = neighbor_distances.iter().sum::<f64>() / neighbor_distances.len() as f64;
    Ok(SigmaSpec {
        method: Method::Knn,
        sigma: f * mean,
        provenance: SigmaProvenance::Knn {
            mean_distance: mean,
            f,
            neighbors_used: neighbor_distances.len(),
        },
    })
}

/// 4-connected component of the mask that holds the head: the one containing
/// the rounded head pixel, or else the one containing the inside pixel nearest
/// to the head (first in raster order on ties).
pub fn head_component(mask: &RegionMask, head: Point) -> Vec<(usize, usize)> {
    let win = *mask.window();
    let b = win.bounds;
    let (w, h) = (win.width(), win.height());
    let cells = mask.cells();

    let hp = head.to_pixel(b.x1 + 1, b.y1 + 1);
    let seed = if mask.is_inside(hp.0, hp.1) {
        hp
    } else {
        let mut best: Option<(f64, (usize, usize))> = None;
        for p in mask.inside_pixels() {
            let d = Point::new(p.0 as f64, p.1 as f64).dist2(head);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, p));
            }
        }
        best.expect("mask has an inside pixel").1
    };

    let mut seen = vec![false; cells.len()];
    let mut queue = VecDeque::new();
    let mut out = Vec::new();
    let start = (seed.1 - b.y0) * w + (seed.0 - b.x0);
    seen[start] = true;
    queue.push_back(start);
    while let Some(i) = queue.pop_front() {
        let (lx, ly) = (i % w, i / w);
        out.push((b.x0 + lx, b.y0 + ly));
        let mut visit = |j: usize| {
            if cells[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        };
        if lx > 0 {
            visit(i - 1);
        }
        if lx + 1 < w {
            visit(i + 1);
        }
        if ly > 0 {
            visit(i - w);
        }
        if ly + 1 < h {
            visit(i + w);
        }
    }
    out.sort_unstable_by_key(|&(x, y)| (y, x));
    out
}

/// Pixels of `region` with a 4-neighbor outside it or on the window border.
pub fn boundary_pixels(region: &[(usize, usize)], window: PixelRect) -> Vec<(usize, usize)> {
    let w = window.width();
    let mut member = vec![false; window.area()];
    for &(x, y) in region {
        member[(y - window.y0) * w + (x - window.x0)] = true;
    }
    let is_member = |x: usize, y: usize| window.contains(x, y) && member[(y - window.y0) * w + (x - window.x0)];
    region
        .iter()
        .copied()
        .filter(|&(x, y)| {
            x == window.x0
                || y == window.y0
                || x == window.x1
                || y == window.y1
                || !is_member(x - 1, y)
                || !is_member(x + 1, y)
                || !is_member(x, y - 1)
                || !is_member(x, y + 1)
        })
        .collect()
}

/// Spread from the segmented head: the mean distance `r` from the head point
/// to the boundary of its region, divided by `extent_factor`, floored at 1.
pub fn sigma_content_aware(seg: &SegmentationResult, head: Point, extent_factor: f64) -> Result<SigmaSpec> {
    require_positive("extent factor", extent_factor)?;
    let region = head_component(&seg.mask, head);
    let boundary = boundary_pixels(&region, seg.mask.window().bounds);
    let mean_radius = boundary
        .iter()
        .map(|&(x, y)| Point::new(x as f64, y as f64).dist(head))
        .sum::<f64>()
        / boundary.len() as f64;
    let degenerate = region.len() <= 1;
    let sigma = if degenerate {
        MIN_CONTENT_SIGMA
    } else {
        (mean_radius / extent_factor).max(MIN_CONTENT_SIGMA)
    };
    Ok(SigmaSpec {
        method: Method::ContentAware,
        sigma,
        provenance: SigmaProvenance::ContentAware {
            mean_boundary_radius: mean_radius,
            extent_factor,
            boundary_pixels: boundary.len(),
            degenerate,
        },
    })
}

/// Truncated, discretely normalized 2-D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPatch {
    pub center: Point,
    pub sigma: f64,
    /// Bounding rectangle: rounded center +- ceil(truncation * sigma), clipped.
    pub support: PixelRect,
    /// Row-major over `support`; zero beyond `truncation * sigma` of the center.
    pub weights: Vec<f64>,
}

impl KernelPatch {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        if self.support.contains(x, y) {
            self.weights[(y - self.support.y0) * self.support.width() + (x - self.support.x0)]
        } else {
            0.0
        }
    }

    /// Global pixel coordinates with their weights, row-major.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let s = self.support;
        let w = s.width();
        self.weights
            .iter()
            .enumerate()
            .map(move |(i, &v)| ((s.x0 + i % w, s.y0 + i / w), v))
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }
}

/// Neumaier-compensated summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Samples `exp(-d^2 / (2 sigma^2))` at pixel centers within `truncation *
/// sigma` of `center`, inside a `width x height` grid, and rescales the
/// samples to sum to one.
pub fn make_kernel(center: Point, sigma: f64, truncation: f64, width: usize, height: usize) -> Result<KernelPatch> {
    require_positive("sigma", sigma)?;
    require_positive("truncation", truncation)?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    let (cx, cy) = center.to_pixel(width, height);
    let radius = truncation * sigma;
    let half = radius.ceil() as usize;
    let support = PixelRect::square_clipped(cx, cy, half, width, height);
    let r2 = radius * radius;
    let denom = 2.0 * sigma * sigma;

    let mut weights = Vec::with_capacity(support.area());
    for y in support.y0..=support.y1 {
        for x in support.x0..=support.x1 {
            let d2 = Point::new(x as f64, y as f64).dist2(center);
            weights.push(if d2 <= r2 { (-d2 / denom).exp() } else { 0.0 });
        }
    }
    let mut total = compensated_sum(weights.iter().copied());
    if total <= 0.0 || !total.is_finite() {
        // cutoff narrower than the offset to the nearest pixel center
        let i = (cy - support.y0) * support.width() + (cx - support.x0);
        weights.iter_mut().for_each(|v| *v = 0.0);
        weights[i] = 1.0;
        total = 1.0;
    }
    if total <= 0.0 {
        return Err(Error::Internal("kernel support is empty".into()));
    }
    for v in &mut weights {
        *v /= total;
    }
    Ok(KernelPatch {
        center,
        sigma,
        support,
        weights,
    })
}
