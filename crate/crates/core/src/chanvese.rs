//! Two-phase Chan-Vese segmentation of a single head inside a square window.
//!
//! The energy of a binary partition of the window into inside/outside is
//!
//! ```text
//! F = mu * Len + nu * Area + l1 * sum_in (u - c1)^2 + l2 * sum_out (u - c2)^2
//! ```
//!
//! where `c1`/`c2` are the inside/outside means, `Area` counts inside pixels
//! and `Len` counts 4-neighbor edges between an inside pixel and an outside
//! pixel or the window border. The minimizer alternates exact mean updates
//! with a raster sweep that moves a pixel to the other phase only when that
//! strictly lowers the energy for the current means. For `mu = 0` the sweep is
//! pointwise and every iteration is non-increasing in `F`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{round_to_pixel, PixelRect, Point};
use crate::ingest::IntensityGrid;

/// Side of the initial square region.
pub const INIT_BOX: usize = 5;
/// Smallest half-width of a head window.
pub const MIN_HALF_WIDTH: usize = 3;
/// A pixel changes phase only if that lowers its cost by more than this;
/// means of identical values may differ in the last bits.
pub const FLIP_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanVeseParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
    pub nu: f64,
    pub max_iterations: usize,
    pub convergence_patience: usize,
}

impl Default for ChanVeseParams {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            mu: 0.0,
            nu: 0.0,
            max_iterations: 500,
            convergence_patience: 3,
        }
    }
}

impl ChanVeseParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lambda1 > 0.0 && self.lambda1.is_finite()) {
            return bad(format!("lambda1 = {} must be > 0", self.lambda1));
        }
        if !(self.lambda2 > 0.0 && self.lambda2.is_finite()) {
            return bad(format!("lambda2 = {} must be > 0", self.lambda2));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu = {} must be >= 0", self.mu));
        }
        if !self.nu.is_finite() {
            return bad(format!("nu = {} must be finite", self.nu));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1".into());
        }
        if self.convergence_patience == 0 {
            return bad("convergence_patience must be >= 1".into());
        }
        Ok(())
    }
}

/// Square region around a head, clipped to the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiWindow {
    pub center: (usize, usize),
    pub half_width: usize,
    pub bounds: PixelRect,
}

impl RoiWindow {
    /// A window spanning the whole grid, centered on its middle pixel.
    pub fn covering(grid: &IntensityGrid) -> Self {
        let (w, h) = (grid.width(), grid.height());
        Self {
            center: ((w - 1) / 2, (h - 1) / 2),
            half_width: w.max(h),
            bounds: PixelRect {
                x0: 0,
                y0: 0,
                x1: w - 1,
                y1: h - 1,
            },
        }
    }

    pub fn width(&self) -> usize {
        self.bounds.width()
    }

    pub fn height(&self) -> usize {
        self.bounds.height()
    }

    pub fn area(&self) -> usize {
        self.bounds.area()
    }

    #[inline]
    fn local(&self, x: usize, y: usize) -> usize {
        (y - self.bounds.y0) * self.width() + (x - self.bounds.x0)
    }
}

/// Window of half-width `max(3, round(nn_distance))` around the rounded head.
pub fn roi_window(head: Point, nn_distance: f64, grid: &IntensityGrid) -> Result<RoiWindow> {
    roi_window_scaled(head, nn_distance, 1.0, grid)
}

/// As [`roi_window`] with the half-width taken as `round(scale * nn_distance)`.
pub fn roi_window_scaled(head: Point, nn_distance: f64, scale: f64, grid: &IntensityGrid) -> Result<RoiWindow> {
    if !(nn_distance > 0.0 && nn_distance.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "nearest-neighbor distance {nn_distance} must be > 0"
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("window scale {scale} must be > 0")));
    }
    let (w, h) = (grid.width(), grid.height());
    let center = head.to_pixel(w, h);
    let half_width = (round_to_pixel(scale * nn_distance).max(0) as usize).max(MIN_HALF_WIDTH);
    Ok(RoiWindow {
        center,
        half_width,
        bounds: PixelRect::square_clipped(center.0, center.1, half_width, w, h),
    })
}

/// Binary inside/outside labeling of the pixels of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    window: RoiWindow,
    inside: Vec<bool>,
}

impl RegionMask {
    /// `inside` is row-major over the window; at least one pixel must be set.
    pub fn new(window: RoiWindow, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != window.area() {
            return Err(Error::InvalidParameter(format!(
                "mask has {} cells, window has {}",
                inside.len(),
                window.area()
            )));
        }
        if !inside.iter().any(|&b| b) {
            return Err(Error::DegenerateRegion("mask has no inside pixel".into()));
        }
        Ok(Self { window, inside })
    }

    /// Mask from a predicate on global pixel coordinates.
    pub fn from_fn(window: RoiWindow, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let b = window.bounds;
        let mut inside = Vec::with_capacity(window.area());
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                inside.push(f(x, y));
            }
        }
        Self::new(window, inside)
    }

    pub fn window(&self) -> &RoiWindow {
        &self.window
    }

    /// Row-major flags over the window.
    pub fn cells(&self) -> &[bool] {
        &self.inside
    }

    /// Whether global pixel `(x, y)` is inside; pixels outside the window are not.
    pub fn is_inside(&self, x: usize, y: usize) -> bool {
        self.window.bounds.contains(x, y) && self.inside[self.window.local(x, y)]
    }

    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Global coordinates of inside pixels in raster order.
    pub fn inside_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let b = self.window.bounds;
        let w = self.window.width();
        self.inside
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (b.x0 + i % w, b.y0 + i / w))
    }

    /// Discrete perimeter: inside-to-(outside or border) 4-neighbor edges.
    pub fn boundary_length(&self) -> usize {
        let (w, h) = (self.window.width(), self.window.height());
        let mut len = 0;
        for ly in 0..h {
            for lx in 0..w {
                if self.inside[ly * w + lx] {
                    len += outward_edges(&self.inside, w, h, lx, ly);
                }
            }
        }
        len
    }
}

/// Number of the 4 sides of `(lx, ly)` that face an outside pixel or the border.
#[inline]
fn outward_edges(inside: &[bool], w: usize, h: usize, lx: usize, ly: usize) -> usize {
    let mut n = 0;
    n += usize::from(lx == 0 || !inside[ly * w + lx - 1]);
    n += usize::from(lx + 1 == w || !inside[ly * w + lx + 1]);
    n += usize::from(ly == 0 || !inside[(ly - 1) * w + lx]);
    n += usize::from(ly + 1 == h || !inside[(ly + 1) * w + lx]);
    n
}

#[inline]
fn inside_neighbors(inside: &[bool], w: usize, h: usize, lx: usize, ly: usize) -> usize {
    let mut n = 0;
    n += usize::from(lx > 0 && inside[ly * w + lx - 1]);
    n += usize::from(lx + 1 < w && inside[ly * w + lx + 1]);
    n += usize::from(ly > 0 && inside[(ly - 1) * w + lx]);
    n += usize::from(ly + 1 < h && inside[(ly + 1) * w + lx]);
    n
}

/// The 5x5 initial region around the rounded head, in a window over the whole grid.
pub fn init_region(head: Point, grid: &IntensityGrid) -> Result<RegionMask> {
    init_region_in(head, RoiWindow::covering(grid), grid)
}

/// The 5x5 initial region around the rounded head, clipped to `window`.
pub fn init_region_in(head: Point, window: RoiWindow, grid: &IntensityGrid) -> Result<RegionMask> {
    if !grid.contains(head) {
        return Err(Error::InvalidParameter(format!(
            "head ({}, {}) outside {}x{} grid",
            head.x,
            head.y,
            grid.width(),
            grid.height()
        )));
    }
    let (cx, cy) = head.to_pixel(grid.width(), grid.height());
    let r = INIT_BOX / 2;
    let x0 = cx.saturating_sub(r);
    let y0 = cy.saturating_sub(r);
    RegionMask::from_fn(window, |x, y| x >= x0 && x <= cx + r && y >= y0 && y <= cy + r)
}

/// Inside/outside means over the window; `None` for an empty phase.
fn phase_means(grid: &IntensityGrid, mask: &RegionMask) -> (Option<f64>, Option<f64>) {
    let b = mask.window.bounds;
    let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    let mut i = 0;
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            let u = grid.get(x, y);
            if mask.inside[i] {
                s_in += u;
                n_in += 1;
            } else {
                s_out += u;
                n_out += 1;
            }
            i += 1;
        }
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    (mean(s_in, n_in), mean(s_out, n_out))
}

/// Energy of `mask` with `c1`, `c2` recomputed from it. An empty outside
/// phase contributes zero.
pub fn energy(grid: &IntensityGrid, mask: &RegionMask, params: &ChanVeseParams) -> Result<f64> {
    check_window(grid, &mask.window)?;
    let (c1, c2) = phase_means(grid, mask);
    let c1 = c1.ok_or_else(|| Error::DegenerateRegion("empty inside region".into()))?;
    Ok(energy_with_means(grid, mask, params, c1, c2.unwrap_or(0.0)))
}

fn energy_with_means(grid: &IntensityGrid, mask: &RegionMask, params: &ChanVeseParams, c1: f64, c2: f64) -> f64 {
    let b = mask.window.bounds;
    let (mut fit_in, mut fit_out, mut area) = (0.0, 0.0, 0usize);
    let mut i = 0;
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            let u = grid.get(x, y);
            if mask.inside[i] {
                fit_in += (u - c1) * (u - c1);
                area += 1;
            } else {
                fit_out += (u - c2) * (u - c2);
            }
            i += 1;
        }
    }
    let mut e = params.lambda1 * fit_in + params.lambda2 * fit_out;
    if params.nu != 0.0 {
        e += params.nu * area as f64;
    }
    if params.mu != 0.0 {
        e += params.mu * mask.boundary_length() as f64;
    }
    e
}

fn check_window(grid: &IntensityGrid, window: &RoiWindow) -> Result<()> {
    let b = window.bounds;
    if b.x0 > b.x1 || b.y0 > b.y1 || b.x1 >= grid.width() || b.y1 >= grid.height() {
        return Err(Error::InvalidParameter(format!(
            "window {b:?} not within {}x{} grid",
            grid.width(),
            grid.height()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub mask: RegionMask,
    pub c1: f64,
    /// Outside mean; equals `c1` when the outside phase is empty.
    pub c2: f64,
    pub final_energy: f64,
    pub iterations_run: usize,
    /// Iterations in which at least one pixel changed phase.
    pub changing_iterations: usize,
    pub converged: bool,
    /// Set when a sweep emptied the inside phase and the mask was reset to
    /// the single head pixel.
    pub collapsed: bool,
    /// Energy of the initial mask followed by the energy after each iteration.
    pub energy_history: Vec<f64>,
}

/// Minimizes the energy over `window` starting from `init`.
pub fn chan_vese_segment(
    grid: &IntensityGrid,
    window: &RoiWindow,
    init: &RegionMask,
    params: &ChanVeseParams,
) -> Result<SegmentationResult> {
    params.validate()?;
    check_window(grid, window)?;
    if init.window != *window {
        return Err(Error::InvalidParameter(
            "initial region belongs to a different window".into(),
        ));
    }

    let b = window.bounds;
    let (w, h) = (window.width(), window.height());
    let values: Vec<f64> = (b.y0..=b.y1)
        .flat_map(|y| (b.x0..=b.x1).map(move |x| (x, y)))
        .map(|(x, y)| grid.get(x, y))
        .collect();

    let mut mask = init.clone();
    let mut history = vec![energy(grid, &mask, params)?];
    let mut stable = 0;
    let mut changing = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut collapsed = false;

    while iterations < params.max_iterations {
        iterations += 1;
        let (c1, c2) = phase_means(grid, &mask);
        let c1 = c1.expect("mask invariant keeps one inside pixel");
        // no outside phase: nothing can strictly prefer it on data terms
        let c2 = c2.unwrap_or(c1);

        let inside = &mut mask.inside;
        let mut changed = 0usize;
        for ly in 0..h {
            for lx in 0..w {
                let i = ly * w + lx;
                let u = values[i];
                let mut cost_in = params.lambda1 * (u - c1) * (u - c1) + params.nu;
                let mut cost_out = params.lambda2 * (u - c2) * (u - c2);
                if params.mu != 0.0 {
                    // boundary edges touching this pixel in each phase; the rest of Len is unchanged
                    let nb_in = inside_neighbors(inside, w, h, lx, ly);
                    cost_in += params.mu * (4 - nb_in) as f64;
                    cost_out += params.mu * nb_in as f64;
                }
                let flip = if inside[i] {
                    cost_out + FLIP_MARGIN < cost_in
                } else {
                    cost_in + FLIP_MARGIN < cost_out
                };
                if flip {
                    inside[i] = !inside[i];
                    changed += 1;
                }
            }
        }

        if !mask.inside.iter().any(|&v| v) {
            let (cx, cy) = window.center;
            mask.inside[window.local(cx, cy)] = true;
            collapsed = true;
            history.push(energy(grid, &mask, params)?);
            break;
        }
        history.push(energy(grid, &mask, params)?);

        if changed == 0 {
            stable += 1;
            if stable >= params.convergence_patience {
                converged = true;
                break;
            }
        } else {
            stable = 0;
            changing += 1;
        }
    }

    let (c1, c2) = phase_means(grid, &mask);
    let c1 = c1.expect("non-empty inside");
    Ok(SegmentationResult {
        final_energy: *history.last().expect("history starts with initial energy"),
        c2: c2.unwrap_or(c1),
        c1,
        mask,
        iterations_run: iterations,
        changing_iterations: changing,
        converged: converged && !collapsed,
        collapsed,
        energy_history: history,
    })
}

/// Intersection over union of two masks' inside pixels.
pub fn iou(a: &RegionMask, b: &RegionMask) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    let bounds = a.window.bounds;
    for (x, y) in b.inside_pixels() {
        if !bounds.contains(x, y) {
            union += 1;
        }
    }
    for y in bounds.y0..=bounds.y1 {
        for x in bounds.x0..=bounds.x1 {
            let (ia, ib) = (a.is_inside(x, y), b.is_inside(x, y));
            inter += usize::from(ia && ib);
            union += usize::from(ia || ib);
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
