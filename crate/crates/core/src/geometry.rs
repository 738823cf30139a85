//! Points and pixel-grid helpers shared by all modules.
//!
//! Pixel `(i, j)` has its center at the continuous coordinate `(i, j)`; the
//! origin is the top-left pixel, `x` grows rightward and `y` downward.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Squared Euclidean distance. Every module computes distances through
    /// this function so comparisons agree bit-for-bit.
    #[inline]
    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(self, other: Point) -> f64 {
        self.dist2(other).sqrt()
    }

    /// Nearest pixel, clamped into a `width x height` grid.
    pub fn to_pixel(self, width: usize, height: usize) -> (usize, usize) {
        (
            round_to_pixel(self.x).min(width as i64 - 1).max(0) as usize,
            round_to_pixel(self.y).min(height as i64 - 1).max(0) as usize,
        )
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// Round to the nearest integer, exact halves going to the smaller integer.
#[inline]
pub fn round_to_pixel(v: f64) -> i64 {
    (v - 0.5).ceil() as i64
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    /// Square of the given half-width around `(cx, cy)`, clipped to the grid.
    pub fn square_clipped(cx: usize, cy: usize, half_width: usize, width: usize, height: usize) -> Self {
        Self {
            x0: cx.saturating_sub(half_width),
            y0: cy.saturating_sub(half_width),
            x1: (cx + half_width).min(width - 1),
            y1: (cy + half_width).min(height - 1),
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_round_down() {
        assert_eq!(round_to_pixel(2.5), 2);
        assert_eq!(round_to_pixel(2.5000001), 3);
        assert_eq!(round_to_pixel(2.4), 2);
        assert_eq!(round_to_pixel(0.0), 0);
        assert_eq!(round_to_pixel(-0.5), -1);
        assert_eq!(round_to_pixel(63.4), 63);
    }

    #[test]
    fn pixel_clamped_to_grid() {
        assert_eq!(Point::new(63.9, 0.2).to_pixel(64, 64), (63, 0));
        assert_eq!(Point::new(10.5, 3.51).to_pixel(64, 64), (10, 4));
    }

    #[test]
    fn clipped_square() {
        let r = PixelRect::square_clipped(2, 2, 10, 128, 128);
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (0, 0, 12, 12));
        assert_eq!(r.area(), 169);
    }
}
